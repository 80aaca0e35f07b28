"""Operations on trained maps: barycenter push, inverse fit, sampling, composition, density."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gaussian_kde

from . import autodiff as ad
from .autodiff import DimensionError
from .costs import CostSpec, cost_rows
from .nets import NetSpec, TransportNet
from .objectives import LabeledSample, inverse_regression_loss
from .training import TrainHistory, train_descent

MAX_DENSITY_DIM = 10


class NotFittedError(RuntimeError):
    pass


def _labels_like(T: TransportNet, z, n: int):
    """Broadcast a single label (or pass through a per-row array) to ``n`` rows."""
    if T.n_labels is not None:
        z = np.asarray(z)
        return np.full(n, int(z)) if z.ndim == 0 else z.astype(int).ravel()
    z = np.asarray(z, dtype=np.float64)
    if z.ndim <= 1 and z.size == T.z_dim:
        return np.tile(z.reshape(1, -1), (n, 1))
    return z.reshape(n, -1)


def push_to_barycenter(sample: LabeledSample, T: TransportNet) -> np.ndarray:
    """``y_i = T(x_i, z_i)`` for every sample point."""
    if sample.zs is None:
        raise ValueError("pushing to the barycenter needs labels")
    if sample.x_dim != T.x_dim:
        raise DimensionError(f"sample has {sample.x_dim} dims, transport expects {T.x_dim}")
    return T(sample.xs, sample.zs)


@dataclass
class TransportPair:
    """Frozen forward map ``T`` and its regression inverse ``S``."""

    T: TransportNet
    S: TransportNet | None = None
    cost: CostSpec = field(default_factory=CostSpec)
    final_loss: float = float("nan")
    history: TrainHistory | None = None

    @property
    def fitted(self) -> bool:
        return self.S is not None

    @property
    def n_maps(self) -> int:
        """Number of trained maps: one forward and one inverse per label (or one each)."""
        per = self.T.n_labels or 1
        return per * (2 if self.fitted else 1)

    def forward(self, x, z) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.T(x, _labels_like(self.T, z, len(x)))

    def inverse(self, y, z) -> np.ndarray:
        if not self.fitted:
            raise NotFittedError("inverse map has not been fitted")
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        return self.S(y, _labels_like(self.S, z, len(y)))


def fit_inverse(sample: LabeledSample, T: TransportNet, spec: NetSpec | None = None,
                optimizer: str = "sgd", n_iter: int = 20_000, lr: float = 5e-2,
                batch_size: int | None = None, c: CostSpec | None = None,
                seed: int = 0) -> TransportPair:
    """Fit ``S`` by minimising ``mean c(x, S(T(x, z), z))`` with ``T`` frozen.

    ``S`` defaults to ``T``'s architecture with a zero-initialised residual.
    """
    c = CostSpec() if c is None else c
    rng = np.random.default_rng(seed)
    y_dim = T.x_dim if T.residual else T.spec.n_out
    if spec is None:
        spec = T.spec
    S0 = TransportNet.create(spec, y_dim, T.z_dim, T.n_labels, rng=rng, zero_last=True,
                             residual=y_dim == sample.x_dim)
    T_frozen = dataclasses.replace(T, training=False)

    def value_and_grad(p, batch):
        return ad.value_and_grad(
            lambda pn: inverse_regression_loss(batch, T_frozen, S0.with_params(pn), c), p)

    params, hist = train_descent(value_and_grad, S0.params, sample, optimizer=optimizer,
                                 n_iter=n_iter, batch_size=batch_size, lr=lr, rng=rng)
    S = S0.with_params(params)
    final = float(inverse_regression_loss(sample, T_frozen, S, c).value)
    return TransportPair(T_frozen, S, c, final, hist)


def round_trip_loss(pair: TransportPair, sample: LabeledSample) -> float:
    back = pair.inverse(pair.forward(sample.xs, sample.zs), sample.zs)
    return float(np.mean(cost_rows(pair.cost, sample.xs, back)))


def sample_conditional(pair: TransportPair, ys, z) -> np.ndarray:
    """``{S(y_i, z)}``: barycenter points pulled back to the conditional at ``z``."""
    return pair.inverse(ys, z)


def compose_pairwise(pair_k: TransportPair, pair_j: TransportPair, k=None, j=None):
    """The map ``x -> S_j(T_k(x))`` through the shared barycenter.

    ``k`` and ``j`` select labels when the pairs carry a finite label set.
    """
    if not pair_j.fitted:
        raise NotFittedError("target pair has no inverse map")
    y_dim = pair_k.T.x_dim if pair_k.T.residual else pair_k.T.spec.n_out
    if pair_j.S.x_dim != y_dim:
        raise DimensionError("pairs do not share a barycenter space")

    def mapped(x):
        return pair_j.inverse(pair_k.forward(x, k), j)

    return mapped


def barycenter_kde(ys):
    """Gaussian KDE with Silverman's bandwidth over pushed points; returns a callable density."""
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    kde = gaussian_kde(ys.T, bw_method="silverman")
    return lambda pts: kde(np.atleast_2d(np.asarray(pts, dtype=np.float64)).T)


def transport_jacobian(T: TransportNet, x, z, method: str = "reverse", h: float = 1e-5):
    """``d T(x, z) / d x`` for each row of ``x``; shape (n, d, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, d = x.shape
    T = dataclasses.replace(T, training=False)
    zz = _labels_like(T, z, n)
    if method == "fd":
        cols = []
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            cols.append((T(x + e, zz) - T(x - e, zz)) / (2 * h))
        return np.stack(cols, axis=2)
    if method != "reverse":
        raise ValueError("jacobian method must be 'reverse' or 'fd'")
    rows = []
    for i in range(d):
        leaf = ad.variable(x)
        out = T.apply(leaf, zz)
        rows.append(ad.grad(ad.reduce_sum(ad.index(out, (slice(None), i))), leaf))
    return np.stack(rows, axis=1)


def density_from_jacobian(T: TransportNet, z, density, x, method: str = "reverse",
                          h: float = 1e-5) -> np.ndarray:
    """``|det grad_x T(x, z)| * density(T(x, z))`` row-wise."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = x.shape[1]
    if d > MAX_DENSITY_DIM:
        raise ValueError(f"density recovery limited to d <= {MAX_DENSITY_DIM}")
    y_dim = T.x_dim if T.residual else T.spec.n_out
    if y_dim != d or T.x_dim != d:
        raise DimensionError("density recovery needs matching x and barycenter spaces")
    jac = transport_jacobian(T, x, z, method=method, h=h)
    y = T(x, _labels_like(T, z, len(x)))
    return np.abs(np.linalg.det(jac)) * np.asarray(density(y), dtype=np.float64)
