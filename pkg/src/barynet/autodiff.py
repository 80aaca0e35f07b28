"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation returns a :class:`Node` holding its value, its parents and a
vector-Jacobian product. The graph reachable from a scalar head is linearised
into a :class:`Tape` (topological order) and swept backwards exactly once.

Only the primitives needed by the BaryNet losses are provided: affine maps,
(leaky) ReLU, SoftMax, batch norm, elementwise arithmetic, reductions and a
handful of elementwise transcendental functions used by the costs and kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes do not agree with a network or parameter layout."""


class ContractError(ValueError):
    """Raised when a differentiation request is malformed (e.g. non-scalar head)."""


def _as_array(x) -> np.ndarray:
    # extended-precision input is kept so finite differences can run above float64
    a = np.asarray(x)
    return a if a.dtype == np.longdouble else a.astype(np.float64, copy=False)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that were broadcast in the forward op
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "parents", "vjp", "fwd", "op", "grad")
    __array_priority__ = 100.0

    def __init__(self, value, parents=(), vjp=None, fwd=None, op="leaf"):
        self.value = value
        self.parents: tuple = tuple(parents)
        self.vjp: Callable | None = vjp
        self.fwd: Callable | None = fwd
        self.op = op
        self.grad = None

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __float__(self):
        return float(self.value)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division by a Node is not supported")
        return mul(self, 1.0 / _as_array(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)


def constant(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(_as_array(x))


def variable(x) -> Node:
    """A leaf whose gradient is wanted."""
    return Node(np.array(x, dtype=np.float64), op="var")


def _lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(op, parents, fwd, vjp) -> Node:
    value = fwd(*[p.value for p in parents])
    return Node(value, parents, vjp, fwd, op)


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return _make("add", (a, b), np.add,
                 lambda g, va, vb: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return _make("sub", (a, b), np.subtract,
                 lambda g, va, vb: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return _make("mul", (a, b), np.multiply,
                 lambda g, va, vb: (_unbroadcast(g * vb, sa), _unbroadcast(g * va, sb)))


def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return _make("matmul", (a, b), np.matmul,
                 lambda g, va, vb: (g @ vb.T, va.T @ g))


def affine(x, W, b=None) -> Node:
    """Row-batched affine map ``x @ W + b``."""
    x, W = _lift(x), _lift(W)
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {W.shape}")
    if b is None:
        return _make("affine", (x, W), np.matmul, lambda g, vx, vW: (g @ vW.T, vx.T @ g))
    b = _lift(b)
    return _make(
        "affine", (x, W, b),
        lambda vx, vW, vb: vx @ vW + vb,
        lambda g, vx, vW, vb: (g @ vW.T, vx.T @ g, g.sum(axis=0)),
    )


def relu(x) -> Node:
    x = _lift(x)
    # subgradient at 0 is 0
    return _make("relu", (x,), lambda v: np.maximum(v, 0.0),
                 lambda g, v: (g * (v > 0.0),))


def leaky_relu(x, slope: float = 0.1) -> Node:
    x = _lift(x)
    return _make("leaky_relu", (x,),
                 lambda v: np.where(v > 0.0, v, slope * v),
                 lambda g, v: (g * np.where(v > 0.0, 1.0, slope),))


def square(x) -> Node:
    x = _lift(x)
    return _make("square", (x,), np.square, lambda g, v: (2.0 * g * v,))


def exp(x) -> Node:
    x = _lift(x)
    return _make("exp", (x,), np.exp, lambda g, v: (g * np.exp(v),))


def sin(x) -> Node:
    x = _lift(x)
    return _make("sin", (x,), np.sin, lambda g, v: (g * np.cos(v),))


def cos(x) -> Node:
    x = _lift(x)
    return _make("cos", (x,), np.cos, lambda g, v: (-g * np.sin(v),))


def softmax(x, axis: int = -1) -> Node:
    x = _lift(x)

    def fwd(v):
        e = np.exp(v - v.max(axis=axis, keepdims=True))
        return e / e.sum(axis=axis, keepdims=True)

    def vjp(g, v):
        p = fwd(v)
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make("softmax", (x,), fwd, vjp)


def batch_norm(x, gamma, beta, eps: float = 1e-5, stats=None) -> Node:
    """Normalise columns of ``x``.

    With ``stats=None`` the current batch mean/variance are used and
    differentiated through; otherwise ``stats=(mean, var)`` are treated as
    constants (evaluation mode).
    """
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    if stats is not None:
        m, var = (np.asarray(s, dtype=np.float64) for s in stats)
        scale = 1.0 / np.sqrt(var + eps)
        xhat = mul(sub(x, m), scale)
        return add(mul(xhat, gamma), beta)

    def fwd(v, vg, vb):
        mu = v.mean(axis=0)
        var = v.var(axis=0)
        return (v - mu) / np.sqrt(var + eps) * vg + vb

    def vjp(g, v, vg, vb):
        n = v.shape[0]
        mu = v.mean(axis=0)
        var = v.var(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (v - mu) * inv
        gx = g * vg
        dx = inv / n * (n * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make("batch_norm", (x, gamma, beta), fwd, vjp)


def reduce_sum(x, axis=None) -> Node:
    x = _lift(x)
    shape = x.shape

    def vjp(g, v):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("sum", (x,), lambda v: np.sum(v, axis=axis), vjp)


def reduce_mean(x, axis=None) -> Node:
    x = _lift(x)
    n = x.value.size if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis), 1.0 / n)


def dot(a, b) -> Node:
    """Inner product of two 1-D nodes."""
    return reduce_sum(mul(a, b))


def reshape(x, shape) -> Node:
    x = _lift(x)
    old = x.shape
    return _make("reshape", (x,), lambda v: np.reshape(v, shape),
                 lambda g, v: (np.reshape(g, old),))


def index(x, idx) -> Node:
    x = _lift(x)
    shape = x.shape

    def vjp(g, v):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make("index", (x,), lambda v: v[idx], vjp)


def segment(flat, start: int, shape: tuple) -> Node:
    """Slice ``flat[start:start+prod(shape)]`` and reshape; the backbone of parameter access."""
    flat = _lift(flat)
    size = int(np.prod(shape)) if len(shape) else 1
    stop = start + size
    total = flat.shape[0]

    def vjp(g, v):
        out = np.zeros(total)
        out[start:stop] = np.ravel(g)
        return (out,)

    return _make("segment", (flat,), lambda v: v[start:stop].reshape(shape), vjp)


def concat(parts: Sequence, axis: int = -1) -> Node:
    parts = [_lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g, *vals):
        return tuple(np.split(g, cuts, axis=axis))

    return _make("concat", tuple(parts), lambda *vals: np.concatenate(vals, axis=axis), vjp)


def stop_gradient(x) -> Node:
    return constant(x.value if isinstance(x, Node) else x)


def custom(op: str, parents: Sequence, value, vjp) -> Node:
    """Register an op with a hand-written value and vector-Jacobian product.

    ``vjp(g, *parent_values)`` must return one gradient per parent. The op is
    not replayable unless a forward is supplied via :func:`custom_fwd`.
    """
    parents = tuple(_lift(p) for p in parents)
    return Node(value, parents, vjp, None, op)


def custom_fwd(op: str, parents: Sequence, fwd, vjp) -> Node:
    parents = tuple(_lift(p) for p in parents)
    return _make(op, parents, fwd, vjp)


# ---------------------------------------------------------------------------
# tape


@dataclass
class Tape:
    """Topologically ordered view of the graph feeding ``head``."""

    head: Node
    nodes: list = field(default_factory=list)

    @classmethod
    def record(cls, head: Node) -> "Tape":
        order, seen = [], set()
        stack = [(head, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(head, order)

    def backward(self) -> None:
        if np.size(self.head.value) != 1:
            raise ContractError(f"backward needs a scalar head, got shape {self.head.shape}")
        for node in self.nodes:
            node.grad = None
        self.head.grad = np.ones_like(self.head.value, dtype=np.float64)
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            grads = node.vjp(node.grad, *[p.value for p in node.parents])
            for p, g in zip(node.parents, grads):
                if g is None:
                    continue
                p.grad = g if p.grad is None else p.grad + g

    def replay(self) -> list:
        """Recompute every node's value from the leaves; returns the new values."""
        values = {}
        out = []
        for node in self.nodes:
            if node.fwd is None or not node.parents:
                v = node.value
            else:
                v = node.fwd(*[values[id(p)] for p in node.parents])
            values[id(node)] = v
            out.append(v)
        return out


def grad(head: Node, wrt: Node | Iterable[Node]):
    """Gradient of a scalar ``head`` with respect to one or several leaves."""
    if np.size(head.value) != 1:
        raise ContractError(f"grad needs a scalar loss, got shape {head.shape}")
    Tape.record(head).backward()
    if isinstance(wrt, Node):
        return np.zeros_like(wrt.value) if wrt.grad is None else np.asarray(wrt.grad, dtype=np.float64)
    return [np.zeros_like(w.value) if w.grad is None else np.asarray(w.grad, dtype=np.float64)
            for w in wrt]


def value_and_grad(fn: Callable[[Node], Node], x: np.ndarray):
    """Evaluate ``fn`` at ``x`` and return ``(value, d fn / d x)``."""
    leaf = variable(x)
    out = fn(leaf)
    if not isinstance(out, Node):
        return float(out), np.zeros_like(leaf.value)
    g = grad(out, leaf)
    return float(np.reshape(out.value, ())), g


# ---------------------------------------------------------------------------
# parameter vectors


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter vector with a named segment layout."""

    values: np.ndarray
    layout: tuple = ()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).ravel()
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "layout", tuple((str(n), tuple(s)) for n, s in self.layout))
        expected = sum(int(np.prod(s)) for _, s in self.layout)
        if self.layout and expected != vals.size:
            raise DimensionError(f"layout describes {expected} values but got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("parameter vector contains non-finite values")

    def __len__(self):
        return self.values.size

    @property
    def offsets(self) -> dict:
        out, pos = {}, 0
        for name, shape in self.layout:
            out[name] = (pos, shape)
            pos += int(np.prod(shape))
        return out

    def segment(self, name: str) -> np.ndarray:
        start, shape = self.offsets[name]
        return self.values[start:start + int(np.prod(shape))].reshape(shape)

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)

    @classmethod
    def from_segments(cls, segments: Sequence[tuple]) -> "ParamVector":
        layout = [(name, np.shape(arr)) for name, arr in segments]
        flat = (np.concatenate([np.ravel(arr) for _, arr in segments])
                if segments else np.zeros(0))
        return cls(flat, layout)


def finite_diff_gradients(fn: Callable[[Node], Node], params, h: float = 1e-5,
                          relative_step: bool = True, order: int = 2, extended: bool = False):
    """Tape gradient and finite differences side by side: ``(analytic, fd)``.

    ``order`` 2 is the central difference; ``order`` 4 is the five-point
    stencil. The step for coordinate ``i`` is ``h * (1 + |p_i|)`` when
    ``relative_step``. ``extended`` evaluates the loss in long double, which
    lowers the round-off floor of the differences where the platform's long
    double is wider than float64.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    p = np.array(params.values if isinstance(params, ParamVector) else params, dtype=np.float64)
    _, analytic = value_and_grad(fn, p)
    work = p.astype(np.longdouble) if extended else p

    def at(i, delta):
        q = work.copy()
        q[i] += delta
        return fn(constant(q)).value.reshape(())

    fd = np.empty_like(p)
    for i in range(p.size):
        step = h * (1.0 + abs(p[i])) if relative_step else h
        if order == 2:
            fd[i] = (at(i, step) - at(i, -step)) / (2 * step)
        else:
            fd[i] = (8 * (at(i, step) - at(i, -step)) - (at(i, 2 * step) - at(i, -2 * step))) / (12 * step)
    return analytic, fd


def relative_errors(analytic, fd) -> np.ndarray:
    return np.abs(analytic - fd) / (np.abs(fd) + 1e-8)


def finite_diff_check(fn: Callable[[Node], Node], params, h: float = 1e-5,
                      relative_step: bool = True, order: int = 2, extended: bool = False) -> float:
    """Max relative error ``|analytic - fd| / (|fd| + 1e-8)`` over coordinates."""
    analytic, fd = finite_diff_gradients(fn, params, h, relative_step, order, extended)
    return float(relative_errors(analytic, fd).max()) if fd.size else 0.0
