"""Minimax BaryNet losses as pure batch -> scalar functions on the autodiff tape.

Each loss takes nets whose ``params`` may be plain arrays or bound
:class:`~barynet.autodiff.Node` objects, and returns a scalar ``Node``. Use
``float(loss)`` for the value.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Node
from .costs import CostSpec, cost_node
from .nets import DiscriminatorPair, LabelNet, NetSpec, TransportNet, mlp_forward


@dataclass
class LabeledSample:
    """Empirical joint sample ``{x_i, z_i}``.

    ``zs`` is an (N, k) float array for a Euclidean label space, or a length-N
    integer array of label indices ``0..K-1`` for a finite one.
    """

    xs: np.ndarray
    zs: np.ndarray | None = None
    weights: np.ndarray | None = None
    n_labels: int | None = None

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        if self.xs.shape[0] < 1:
            raise ValueError("sample must contain at least one point")
        if not np.all(np.isfinite(self.xs)):
            raise ValueError("sample contains NaN or infinite values")
        if self.zs is not None:
            z = np.asarray(self.zs)
            if self.n_labels is not None or np.issubdtype(z.dtype, np.integer):
                z = z.astype(int).ravel()
                if self.n_labels is None:
                    self.n_labels = int(z.max()) + 1
                if z.min() < 0 or z.max() >= self.n_labels:
                    raise ValueError(f"discrete labels must lie in 0..{self.n_labels - 1}")
            else:
                z = z.astype(np.float64).reshape(len(z), -1)
                if not np.all(np.isfinite(z)):
                    raise ValueError("labels contain NaN or infinite values")
            if len(z) != len(self.xs):
                raise DimensionError("xs and zs must have the same number of rows")
            self.zs = z
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).ravel()
            if w.size != len(self.xs) or np.any(w < 0) or w.sum() <= 0:
                raise ValueError("weights must be nonnegative, one per point")
            self.weights = w / w.sum()

    def __len__(self):
        return len(self.xs)

    @property
    def discrete(self) -> bool:
        return self.n_labels is not None

    @property
    def x_dim(self) -> int:
        return self.xs.shape[1]

    @property
    def z_dim(self) -> int:
        if self.zs is None or self.discrete:
            return 0
        return self.zs.shape[1]

    def take(self, idx) -> "LabeledSample":
        idx = np.asarray(idx)
        return LabeledSample(
            self.xs[idx],
            None if self.zs is None else self.zs[idx],
            None if self.weights is None else self.weights[idx],
            self.n_labels,
        )


@dataclass
class SemiSupConfig:
    lam: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")


@dataclass
class BaePrior:
    """Prior ``P_Z`` (unit Gaussian by default) plus the latent discriminator ``phi``."""

    spec_phi: NetSpec
    z_dim: int = 1
    seed: int = 0
    params: object = None
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.spec_phi.n_in != self.z_dim or self.spec_phi.n_out != 1:
            raise DimensionError("phi must map the latent space to a scalar")
        self._rng = np.random.default_rng(self.seed)
        if self.params is None:
            self.params = self.spec_phi.init_params(np.random.default_rng(self.seed + 1)).values

    def sample(self, n: int) -> np.ndarray:
        return self._rng.standard_normal((n, self.z_dim))

    def with_params(self, params) -> "BaePrior":
        out = BaePrior(self.spec_phi, self.z_dim, self.seed, params)
        out._rng = self._rng
        return out

    def phi(self, z) -> Node:
        return ad.reshape(mlp_forward(self.spec_phi, self.params, z), (-1,))


# ---------------------------------------------------------------------------


def center_psi_z(values, weights=None):
    """Subtract the (weighted) sample mean; works on arrays and on Nodes."""
    if isinstance(values, Node):
        if weights is None:
            return ad.sub(values, ad.reduce_mean(values))
        return ad.sub(values, ad.reduce_sum(ad.mul(values, weights)))
    v = np.asarray(values, dtype=np.float64)
    if v.size < 1:
        raise ValueError("need at least one value to center")
    m = v.mean() if weights is None else np.sum(v * weights)
    return v - m


def _wmean(v: Node, weights) -> Node:
    return ad.reduce_mean(v) if weights is None else ad.reduce_sum(ad.mul(v, weights))


def _psi_z_values(D: DiscriminatorPair, z, discrete: bool) -> Node:
    if discrete:
        labels = np.asarray(z).astype(int).ravel()
        return ad.index(D.q(), labels)
    return D.psi_z(z)


def _transport_terms(xs, z, T: TransportNet, D: DiscriminatorPair, c: CostSpec, discrete: bool):
    """Per-point cost, psi_Y(T) and raw psi_Z for labels ``z``."""
    x = ad.constant(xs)
    y = T.apply(x, z)
    cost = cost_node(c, x, y)
    return cost, D.psi_y(y), _psi_z_values(D, z, discrete)


def supervised_loss(batch: LabeledSample, T: TransportNet, D: DiscriminatorPair,
                    c: CostSpec) -> Node:
    """Mean of ``c(x, T(x, z)) - psi_Y(T(x, z)) * centered psi_Z(z)`` over the batch."""
    if batch.zs is None:
        raise ValueError("supervised loss needs labels")
    cost, py, pz = _transport_terms(batch.xs, batch.zs, T, D, c, batch.discrete)
    w = batch.weights
    tilde = center_psi_z(pz, w)
    return _wmean(ad.sub(cost, ad.mul(py, tilde)), w)


def _check_label_dims(zNet: LabelNet, T: TransportNet):
    if zNet.spec.n_out != T.z_dim:
        raise DimensionError(f"label net outputs {zNet.spec.n_out} dims, transport expects {T.z_dim}")


def factor_loss_deterministic(xs, zNet: LabelNet, T: TransportNet, D: DiscriminatorPair,
                              c: CostSpec, weights=None) -> Node:
    """Supervised loss evaluated on the labels ``z_theta(x_i)`` (centering over those labels)."""
    _check_label_dims(zNet, T)
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    z = zNet.encode(xs)
    cost, py, pz = _transport_terms(xs, z, T, D, c, False)
    tilde = center_psi_z(pz, weights)
    return _wmean(ad.sub(cost, ad.mul(py, tilde)), weights)


def factor_loss_discrete(xs, memberships, T: TransportNet, D: DiscriminatorPair,
                         c: CostSpec) -> Node:
    """Soft-assignment clustering loss over K per-label transport maps.

    ``memberships`` is an (N, K) array or Node whose rows sum to one; ``D``
    carries ``psi_Y`` and the label vector ``q``.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    P = memberships if isinstance(memberships, Node) else ad.constant(memberships)
    K = T.n_labels
    if K is None or D.n_labels != K or P.shape != (len(xs), K):
        raise DimensionError("memberships, transport maps and q must agree on K")
    if np.max(np.abs(P.value.sum(axis=1) - 1.0)) > 1e-8:
        raise ValueError("membership rows must sum to 1")
    n = len(xs)
    x = ad.constant(xs)
    q = D.q()
    mass = ad.mul(ad.reduce_sum(P, axis=0), 1.0 / n)
    qt = ad.sub(q, ad.dot(q, mass))
    total = None
    for k in range(K):
        yk = T.apply_label(x, k)
        ck = cost_node(c, x, yk)
        term = ad.sub(ck, ad.mul(D.psi_y(yk), ad.index(qt, k)))
        part = ad.dot(ad.index(P, (slice(None), k)), term)
        total = part if total is None else ad.add(total, part)
    return ad.mul(total, 1.0 / n)


def discrete_factor_loss(xs, pNet: LabelNet, T: TransportNet, D: DiscriminatorPair,
                         c: CostSpec) -> Node:
    """:func:`factor_loss_discrete` with SoftMax memberships from a logit net."""
    return factor_loss_discrete(xs, pNet.memberships(np.atleast_2d(xs)), T, D, c)


def semisup_loss_partial(cfg: SemiSupConfig, labeled: LabeledSample, unlabeled_xs,
                         zNet: LabelNet, T: TransportNet, D: DiscriminatorPair,
                         c: CostSpec) -> Node:
    """Labeled block weighted by lambda, unlabeled block by 1 - lambda, joint centering."""
    lam = cfg.lam
    xu = np.atleast_2d(np.asarray(unlabeled_xs, dtype=np.float64))
    if len(labeled) < 1 or len(xu) < 1:
        raise ValueError("both blocks must be nonempty")
    _check_label_dims(zNet, T)
    c1, py1, pz1 = _transport_terms(labeled.xs, labeled.zs, T, D, c, False)
    c2, py2, pz2 = _transport_terms(xu, zNet.encode(xu), T, D, c, False)
    m = ad.add(ad.mul(ad.reduce_mean(pz1), lam), ad.mul(ad.reduce_mean(pz2), 1.0 - lam))
    l1 = ad.reduce_mean(ad.sub(c1, ad.mul(py1, ad.sub(pz1, m))))
    l2 = ad.reduce_mean(ad.sub(c2, ad.mul(py2, ad.sub(pz2, m))))
    return ad.add(ad.mul(l1, lam), ad.mul(l2, 1.0 - lam))


def semisup_loss_confounding(batch: LabeledSample, z2Net: LabelNet, T: TransportNet,
                             D: DiscriminatorPair, c: CostSpec) -> Node:
    """Known labels ``z1`` concatenated with discovered ``z2_theta(x)``."""
    xs = batch.xs
    z1 = ad.constant(np.asarray(batch.zs, dtype=np.float64).reshape(len(xs), -1))
    z = ad.concat([z1, z2Net.encode(xs)], axis=1)
    if z.shape[1] != T.z_dim:
        raise DimensionError("concatenated label width does not match transport")
    cost, py, pz = _transport_terms(xs, z, T, D, c, False)
    tilde = center_psi_z(pz)
    return ad.reduce_mean(ad.sub(cost, ad.mul(py, tilde)))


def bae_loss(xs, zNet: LabelNet, T: TransportNet, D: DiscriminatorPair, prior: BaePrior,
             prior_sample, c: CostSpec | None = None) -> Node:
    """Factor-discovery loss minus ``[mean phi(z_theta(x)) - mean phi(prior sample)]``."""
    c = CostSpec() if c is None else c
    prior_sample = np.atleast_2d(np.asarray(prior_sample, dtype=np.float64))
    if len(prior_sample) < 1:
        raise ValueError("prior sample must be nonempty")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    base = factor_loss_deterministic(xs, zNet, T, D, c)
    penalty = ad.sub(ad.reduce_mean(prior.phi(zNet.encode(xs))),
                     ad.reduce_mean(prior.phi(ad.constant(prior_sample))))
    return ad.sub(base, penalty)


# ---------------------------------------------------------------------------
# MMD independence penalty


def _sq_dists(a) -> Node:
    a = a if isinstance(a, Node) else ad.constant(np.asarray(a, dtype=np.float64))
    n, d = a.shape
    diff = ad.sub(ad.reshape(a, (n, 1, d)), ad.reshape(a, (1, n, d)))
    return ad.reduce_sum(ad.square(diff), axis=2)


def median_bandwidth(points) -> float:
    """Median pairwise Euclidean distance (off-diagonal); 1.0 if all points coincide."""
    p = np.asarray(points.value if isinstance(points, Node) else points, dtype=np.float64)
    p = p.reshape(len(p), -1)
    d = np.sqrt(np.sum((p[:, None, :] - p[None, :, :]) ** 2, axis=-1))
    off = d[~np.eye(len(p), dtype=bool)]
    off = off[off > 0]
    return float(np.median(off)) if off.size else 1.0


def mmd_independence_penalty(ys, zs, bandwidth_y: float | None = None,
                             bandwidth_z: float | None = None) -> Node:
    """Three-term MMD estimate between the joint of (y, z) and the product of marginals.

    Gaussian RBF kernels ``exp(-|a-b|^2 / (2 s^2))``; bandwidths default to the
    median pairwise distance.
    """
    ys = ys if isinstance(ys, Node) else ad.constant(np.asarray(ys, dtype=np.float64).reshape(len(ys), -1))
    zs = zs if isinstance(zs, Node) else ad.constant(np.asarray(zs, dtype=np.float64).reshape(len(zs), -1))
    n = ys.shape[0]
    if n < 2:
        raise ValueError("MMD needs at least two points")
    if zs.shape[0] != n:
        raise DimensionError("ys and zs must have the same length")
    sy = median_bandwidth(ys) if bandwidth_y is None else bandwidth_y
    sz = median_bandwidth(zs) if bandwidth_z is None else bandwidth_z
    K = ad.exp(ad.mul(_sq_dists(ys), -0.5 / sy ** 2))
    H = ad.exp(ad.mul(_sq_dists(zs), -0.5 / sz ** 2))
    t1 = ad.mul(ad.reduce_sum(ad.mul(K, H)), 1.0 / (n * (n - 1)))
    t2 = ad.mul(ad.dot(ad.reduce_sum(K, axis=1), ad.reduce_sum(H, axis=1)), -2.0 / n ** 3)
    t3 = ad.mul(ad.mul(ad.reduce_sum(K), ad.reduce_sum(H)), 1.0 / (n ** 2 * (n ** 2 - 1)))
    return ad.add(ad.add(t1, t2), t3)


def mmd_supervised_loss(batch: LabeledSample, T: TransportNet, c: CostSpec, weight: float = 1.0,
                        bandwidth_y: float | None = None, bandwidth_z: float | None = None) -> Node:
    """Plain minimisation alternative: mean cost plus ``weight`` times the MMD penalty."""
    x = ad.constant(batch.xs)
    y = T.apply(x, batch.zs)
    z = batch.zs
    if batch.discrete:
        z = np.eye(batch.n_labels)[batch.zs]
    pen = mmd_independence_penalty(y, z, bandwidth_y, bandwidth_z)
    return ad.add(ad.reduce_mean(cost_node(c, x, y)), ad.mul(pen, weight))


def inverse_regression_loss(batch: LabeledSample, T: TransportNet, S: TransportNet,
                            c: CostSpec) -> Node:
    """Mean ``c(x, S(T(x, z), z))`` with T frozen."""
    y_dim = T.x_dim if T.residual else T.spec.n_out
    if S.x_dim != y_dim:
        raise DimensionError("inverse map input does not match transport output")
    y = ad.stop_gradient(T.apply(batch.xs, batch.zs))
    xhat = S.apply(y, batch.zs)
    return ad.reduce_mean(cost_node(c, ad.constant(batch.xs), xhat))
