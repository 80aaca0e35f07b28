"""Network roles of a BaryNet: transport map, inverse map, discriminator pair, label net.

All networks are plain MLPs described by a :class:`NetSpec`. Parameters live in
a flat :class:`~barynet.autodiff.ParamVector`; a net can be evaluated either on
its stored values or on a differentiable :class:`~barynet.autodiff.Node` bound
in their place (see ``with_params``).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Node, ParamVector

ACTIVATIONS = ("relu", "leaky_relu", "linear")


class LabelError(KeyError):
    """Unknown discrete label."""


def parse_arch(text: str) -> tuple:
    """Parse ``'3-7-7-2'`` (or ``3→7→7→2``) into a widths tuple."""
    parts = text.replace("→", "-").replace(">", "-").split("-")
    try:
        widths = tuple(int(p) for p in parts if p.strip())
    except ValueError as exc:
        raise ValueError(f"bad architecture string {text!r}") from exc
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise ValueError(f"bad architecture string {text!r}")
    return widths


@dataclass(frozen=True)
class NetSpec:
    """Layer widths plus the architectural flags of a fully connected net.

    ``hidden_activation`` applies after every hidden layer; the output layer is
    linear. ``batch_norm_hidden`` inserts batch norm before each hidden
    activation.
    """

    widths: tuple
    hidden_activation: str = "relu"
    leaky_slope: float = 0.1
    bias_free_last_layer: bool = False
    batch_norm_hidden: bool = False
    lipschitz_clamp_bound: float | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"widths must be >= 2 positive integers, got {widths}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if self.lipschitz_clamp_bound is not None and self.lipschitz_clamp_bound <= 0:
            raise ValueError("clamp bound must be positive")

    @classmethod
    def from_string(cls, arch: str, **flags) -> "NetSpec":
        return cls(parse_arch(arch), **flags)

    @property
    def arch(self) -> str:
        return "-".join(str(w) for w in self.widths)

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layout(self) -> list:
        out = []
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            last = i == self.n_layers - 1
            out.append((f"W{i}", (a, b)))
            if not (last and self.bias_free_last_layer):
                out.append((f"b{i}", (b,)))
            if self.batch_norm_hidden and not last:
                out.append((f"bn{i}.gamma", (b,)))
                out.append((f"bn{i}.beta", (b,)))
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "activations": [self.hidden_activation] * (self.n_layers - 1) + ["linear"],
            "flags": {
                "bias_free_last_layer": self.bias_free_last_layer,
                "batch_norm_hidden": self.batch_norm_hidden,
                "leaky_slope": self.leaky_slope,
                "lipschitz_clamp_bound": self.lipschitz_clamp_bound,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        acts = d.get("activations") or ["relu"]
        hidden = acts[0] if len(acts) > 1 else "relu"
        return cls(tuple(d["widths"]), hidden_activation=hidden, **d.get("flags", {}))

    @classmethod
    def from_json(cls, text: str) -> "NetSpec":
        return cls.from_dict(json.loads(text))

    def init_params(self, rng: np.random.Generator, zero_last: bool = False) -> ParamVector:
        """Glorot-uniform hidden layers; optionally an exactly-zero output layer."""
        segs = []
        for name, shape in self.layout():
            if name.startswith("W"):
                last = int(name[1:]) == self.n_layers - 1
                if last and zero_last:
                    segs.append((name, np.zeros(shape)))
                else:
                    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
                    segs.append((name, rng.uniform(-bound, bound, size=shape)))
            elif name.endswith("gamma"):
                segs.append((name, np.ones(shape)))
            else:
                segs.append((name, np.zeros(shape)))
        return ParamVector.from_segments(segs)


@dataclass
class BatchNormStats:
    """Running per-layer statistics used when a batch-normed net is evaluated."""

    mean: dict = field(default_factory=dict)
    var: dict = field(default_factory=dict)
    momentum: float = 0.9

    def update(self, layer: int, batch_mean, batch_var):
        m = self.momentum
        if layer not in self.mean:
            self.mean[layer] = np.array(batch_mean, dtype=np.float64)
            self.var[layer] = np.array(batch_var, dtype=np.float64)
        else:
            self.mean[layer] = m * self.mean[layer] + (1 - m) * batch_mean
            self.var[layer] = m * self.var[layer] + (1 - m) * batch_var


def mlp_forward(spec: NetSpec, params, x, bn_stats: BatchNormStats | None = None,
                training: bool = True, collect: dict | None = None) -> Node:
    """Evaluate the MLP on a batch ``x`` of shape (n, n_in).

    ``params`` is a ParamVector, a flat array, or a flat Node. In training mode
    batch norm uses the batch statistics; otherwise ``bn_stats``. When
    ``collect`` is a dict the pre-normalisation batch moments are stored in it.
    """
    if isinstance(params, ParamVector):
        params = params.values
    flat = params if isinstance(params, Node) else ad.constant(params)
    if flat.shape[0] != spec.n_params:
        raise DimensionError(f"net {spec.arch} expects {spec.n_params} params, got {flat.shape[0]}")
    h = x if isinstance(x, Node) else ad.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if h.ndim != 2 or h.shape[1] != spec.n_in:
        raise DimensionError(f"net {spec.arch} expects input width {spec.n_in}, got shape {h.shape}")
    offsets = {}
    pos = 0
    for name, shape in spec.layout():
        offsets[name] = (pos, shape)
        pos += int(np.prod(shape))

    def seg(name):
        start, shape = offsets[name]
        return ad.segment(flat, start, shape)

    for i in range(spec.n_layers):
        last = i == spec.n_layers - 1
        W = seg(f"W{i}")
        b = None if (last and spec.bias_free_last_layer) else seg(f"b{i}")
        h = ad.affine(h, W, b)
        if last:
            break
        if spec.batch_norm_hidden:
            if collect is not None:
                collect[i] = (h.value.mean(axis=0), h.value.var(axis=0))
            stats = None
            if not training:
                if bn_stats is None or i not in bn_stats.mean:
                    raise RuntimeError("batch-norm net evaluated without running statistics")
                stats = (bn_stats.mean[i], bn_stats.var[i])
            h = ad.batch_norm(h, seg(f"bn{i}.gamma"), seg(f"bn{i}.beta"), stats=stats)
        if spec.hidden_activation == "relu":
            h = ad.relu(h)
        elif spec.hidden_activation == "leaky_relu":
            h = ad.leaky_relu(h, spec.leaky_slope)
    return h


def _values(params):
    if isinstance(params, ParamVector):
        return params.values
    if isinstance(params, Node):
        return params
    return np.asarray(params, dtype=np.float64)


def _split(params, sizes):
    """Split a flat param container into consecutive chunks of the given sizes."""
    out, pos = [], 0
    for n in sizes:
        if isinstance(params, Node):
            out.append(ad.segment(params, pos, (n,)))
        else:
            out.append(params[pos:pos + n])
        pos += n
    return out


@dataclass
class _Net:
    """Shared plumbing: every role has a flat ``params`` and can be rebound."""

    def with_params(self, params):
        return dataclasses.replace(self, params=params)

    @property
    def n_params(self) -> int:
        raise NotImplementedError

    def param_vector(self) -> ParamVector:
        p = self.params
        if isinstance(p, ParamVector):
            return p
        if isinstance(p, Node):
            p = p.value
        return ParamVector(np.asarray(p, dtype=np.float64))


@dataclass
class TransportNet(_Net):
    """Residual transport map ``T(x, z) = x + R(x, z)``.

    For a finite label set (``n_labels`` set) the map is a stack of per-label
    nets ``T^k(x) = x + R^k(x)`` sharing one spec; ``params`` then concatenates
    the K parameter blocks. ``residual=False`` drops the identity skip (used when
    the output space differs from the input space).
    """

    spec: NetSpec
    params: object
    x_dim: int
    z_dim: int = 0
    n_labels: int | None = None
    residual: bool = True
    bn_stats: BatchNormStats | None = None
    training: bool = True

    def __post_init__(self):
        want_in = self.x_dim if self.n_labels else self.x_dim + self.z_dim
        if self.spec.n_in != want_in:
            raise DimensionError(
                f"transport spec {self.spec.arch} input {self.spec.n_in} != expected {want_in}")
        if self.residual and self.spec.n_out != self.x_dim:
            raise DimensionError("residual transport must output the x dimension")

    @classmethod
    def create(cls, spec, x_dim, z_dim=0, n_labels=None, rng=None, zero_last=True, **kw):
        rng = np.random.default_rng(0) if rng is None else rng
        reps = n_labels or 1
        blocks = [spec.init_params(rng, zero_last=zero_last).values for _ in range(reps)]
        return cls(spec, np.concatenate(blocks), x_dim, z_dim, n_labels, **kw)

    @property
    def n_params(self) -> int:
        return self.spec.n_params * (self.n_labels or 1)

    def label_params(self, k: int):
        if self.n_labels is None:
            raise LabelError("continuous transport has no per-label parameters")
        if not 0 <= k < self.n_labels:
            raise LabelError(f"label {k} outside 0..{self.n_labels - 1}")
        return _split(_values(self.params), [self.spec.n_params] * self.n_labels)[k]

    def residual_part(self, x, z=None, k: int | None = None) -> Node:
        x = x if isinstance(x, Node) else ad.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if self.n_labels is not None:
            return mlp_forward(self.spec, self.label_params(k), x, self.bn_stats, self.training)
        z = z if isinstance(z, Node) else ad.constant(np.asarray(z, dtype=np.float64).reshape(x.shape[0], -1))
        if z.shape[1] != self.z_dim:
            raise DimensionError(f"label width {z.shape[1]} != {self.z_dim}")
        inp = ad.concat([x, z], axis=1) if self.z_dim else x
        return mlp_forward(self.spec, _values(self.params), inp, self.bn_stats, self.training)

    def apply_label(self, x, k: int) -> Node:
        """``T^k(x)`` for every row of ``x`` (finite label set)."""
        r = self.residual_part(x, k=k)
        return ad.add(x, r) if self.residual else r

    def apply(self, x, z) -> Node:
        """``T(x_i, z_i)`` row-wise; ``z`` holds label indices when the label set is finite."""
        x = x if isinstance(x, Node) else ad.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if self.n_labels is None:
            r = self.residual_part(x, z)
            return ad.add(x, r) if self.residual else r
        labels = np.asarray(z).astype(int).ravel()
        if labels.size != x.shape[0]:
            raise DimensionError("one label per row required")
        bad = set(np.unique(labels)) - set(range(self.n_labels))
        if bad:
            raise LabelError(f"unknown labels {sorted(bad)}")
        out = None
        for k in np.unique(labels):
            mask = (labels == k).astype(np.float64)[:, None]
            part = ad.mul(self.apply_label(x, int(k)), mask)
            out = part if out is None else ad.add(out, part)
        return out

    def __call__(self, x, z):
        return self.apply(x, z).value


def residual_transport_apply(T: TransportNet, x, z):
    """Single point ``T(x, z)`` as a numpy vector."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if T.n_labels is None:
        z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    else:
        z = np.asarray([z])
    return T.apply(x, z).value[0]


@dataclass
class DiscriminatorPair(_Net):
    """Rank-one test function ``psi_Y(y) * psi_Z(z)``.

    ``psi_Z`` is an MLP with a bias-free last layer for a Euclidean label space,
    or a plain vector ``q`` of length K for a finite one.
    """

    spec_y: NetSpec
    params: object
    spec_z: NetSpec | None = None
    n_labels: int | None = None

    def __post_init__(self):
        if self.spec_z is None and self.n_labels is None:
            raise ValueError("need either a psi_Z spec or a finite label count")
        if self.spec_z is not None and not self.spec_z.bias_free_last_layer:
            self.spec_z = dataclasses.replace(self.spec_z, bias_free_last_layer=True)
        if self.spec_y.n_out != 1 or (self.spec_z is not None and self.spec_z.n_out != 1):
            raise DimensionError("discriminators must be scalar valued")

    @classmethod
    def create(cls, spec_y, spec_z=None, n_labels=None, rng=None):
        rng = np.random.default_rng(1) if rng is None else rng
        # psi_Y starts at zero so the product is zero; psi_Z stays random so
        # the gradient of the product is not identically zero at start
        py = spec_y.init_params(rng, zero_last=True).values
        if spec_z is not None:
            spec_z = dataclasses.replace(spec_z, bias_free_last_layer=True)
            pz = spec_z.init_params(rng).values
        else:
            pz = rng.uniform(-1.0, 1.0, size=n_labels)
        return cls(spec_y, np.concatenate([py, pz]), spec_z, n_labels)

    @property
    def n_z_params(self) -> int:
        return self.spec_z.n_params if self.spec_z is not None else self.n_labels

    @property
    def n_params(self) -> int:
        return self.spec_y.n_params + self.n_z_params

    def parts(self):
        return _split(_values(self.params), [self.spec_y.n_params, self.n_z_params])

    def psi_y(self, y) -> Node:
        py, _ = self.parts()
        return ad.reshape(mlp_forward(self.spec_y, py, y), (-1,))

    def psi_z(self, z) -> Node:
        """Uncentered psi_Z on a batch of Euclidean labels, shape (n,)."""
        if self.spec_z is None:
            raise ValueError("finite label set: use q() instead")
        _, pz = self.parts()
        z = z if isinstance(z, Node) else ad.constant(np.asarray(z, dtype=np.float64).reshape(-1, self.spec_z.n_in))
        return ad.reshape(mlp_forward(self.spec_z, pz, z), (-1,))

    def q(self) -> Node:
        _, pz = self.parts()
        return pz if isinstance(pz, Node) else ad.constant(pz)


@dataclass
class LabelNet(_Net):
    """Label net: deterministic ``z_theta(x)`` or SoftMax memberships over K labels."""

    spec: NetSpec
    params: object
    n_labels: int | None = None
    clamp_bias_and_bn: bool = True
    bn_stats: BatchNormStats | None = None
    training: bool = True

    def __post_init__(self):
        if self.n_labels is None and not self.spec.bias_free_last_layer:
            self.spec = dataclasses.replace(self.spec, bias_free_last_layer=True)
        if self.n_labels is not None:
            if self.n_labels < 2:
                raise ValueError("SoftMax memberships need K >= 2")
            if self.spec.n_out != self.n_labels:
                raise DimensionError("logit net width must equal K")

    @classmethod
    def create(cls, spec, n_labels=None, rng=None, **kw):
        rng = np.random.default_rng(2) if rng is None else rng
        if n_labels is None:
            spec = dataclasses.replace(spec, bias_free_last_layer=True)
        net = cls(spec, spec.init_params(rng).values, n_labels, **kw)
        return clamp_params(net) if spec.lipschitz_clamp_bound else net

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def encode(self, x) -> Node:
        """Deterministic labels, shape (n, k)."""
        return mlp_forward(self.spec, _values(self.params), x, self.bn_stats, self.training)

    def logits(self, x) -> Node:
        return mlp_forward(self.spec, _values(self.params), x, self.bn_stats, self.training)

    def memberships(self, x) -> Node:
        return ad.softmax(self.logits(x), axis=1)


def softmax_membership(p: LabelNet, x):
    """Membership probability vector(s) ``p_theta(k | x)``."""
    if p.n_labels is None or p.n_labels < 2:
        raise ValueError("softmax_membership needs a label net with K >= 2")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = p.memberships(np.atleast_2d(x)).value
    return out[0] if single else out


def clamp_vector(values, bound: float, spec: NetSpec | None = None,
                 include_bias_and_bn: bool = True) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if include_bias_and_bn or spec is None:
        return np.clip(v, -bound, bound)
    out = v.copy()
    pos = 0
    for name, shape in spec.layout():
        n = int(np.prod(shape))
        if name.startswith("W"):
            out[pos:pos + n] = np.clip(out[pos:pos + n], -bound, bound)
        pos += n
    return out


def clamp_params(net: LabelNet) -> LabelNet:
    """Clip every parameter into ``[-bound, bound]`` (weights only if configured so)."""
    bound = net.spec.lipschitz_clamp_bound
    if bound is None:
        raise ValueError("label net has no clamp bound configured")
    vals = net.params.value if isinstance(net.params, Node) else _values(net.params)
    return net.with_params(clamp_vector(vals, bound, net.spec, net.clamp_bias_and_bn))


def calibrate_batch_norm(net, x):
    """Evaluation-mode copy of ``net`` whose batch-norm statistics are those of ``x``."""
    if not net.spec.batch_norm_hidden:
        return dataclasses.replace(net, training=False)
    collect = {}
    mlp_forward(net.spec, net.params, x, training=True, collect=collect)
    stats = BatchNormStats()
    for layer, (m, v) in collect.items():
        stats.update(layer, m, v)
    return dataclasses.replace(net, bn_stats=stats, training=False)
