"""Transport costs ``c(x, y)``: squared Euclidean, weighted quadratic, squared great circle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Node

KINDS = ("sq_euclidean", "weighted_quadratic", "sq_great_circle")

_ACOS_GUARD = 1e-9


class CostDomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CostSpec:
    kind: str = "sq_euclidean"
    Q: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "weighted_quadratic":
            if self.Q is None:
                raise ValueError("weighted_quadratic needs a matrix Q")
            Q = np.atleast_2d(np.asarray(self.Q, dtype=np.float64))
            if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T, atol=1e-12):
                raise ValueError("Q must be a symmetric square matrix")
            if np.linalg.eigvalsh(Q).min() <= 0:
                raise ValueError("Q must be positive definite")
            object.__setattr__(self, "Q", Q)

    @classmethod
    def parse(cls, text: str) -> "CostSpec":
        """CLI form: ``sqeuclid``, ``greatcircle`` or ``weighted:<Q.csv>``."""
        if text in ("sqeuclid", "sq_euclidean"):
            return cls()
        if text in ("greatcircle", "sq_great_circle"):
            return cls("sq_great_circle")
        if text.startswith("weighted:"):
            Q = np.loadtxt(text.split(":", 1)[1], delimiter=",", ndmin=2)
            return cls("weighted_quadratic", Q)
        raise ValueError(f"unknown cost {text!r}")

    def describe(self) -> str:
        if self.kind == "weighted_quadratic":
            return f"weighted_quadratic(Q={self.Q.tolist()})"
        return self.kind

    def __call__(self, x, y):
        return cost_eval(self, x, y)

    def pairwise(self, X, Y) -> np.ndarray:
        """Cost matrix between two point sets."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        return cost_rows(self, X[:, None, :], Y[None, :, :])


def _gc_cos(x, y):
    lon1, lat1 = x[..., 0], x[..., 1]
    lon2, lat2 = y[..., 0], y[..., 1]
    return np.sin(lat1) * np.sin(lat2) + np.cos(lat1) * np.cos(lat2) * np.cos(lon1 - lon2)


def cost_rows(spec: CostSpec, x, y) -> np.ndarray:
    """Numpy cost over the last axis, broadcasting the leading axes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != y.shape[-1]:
        raise DimensionError(f"cost dims differ: {x.shape[-1]} vs {y.shape[-1]}")
    d = x - y
    if spec.kind == "sq_euclidean":
        return np.sum(d * d, axis=-1)
    if spec.kind == "weighted_quadratic":
        if spec.Q.shape[0] != d.shape[-1]:
            raise DimensionError("Q does not match point dimension")
        return np.einsum("...i,ij,...j->...", d, spec.Q, d)
    if x.shape[-1] != 2:
        raise DimensionError("great-circle cost needs (longitude, latitude) points")
    arg = _gc_cos(x, y)
    if np.any(np.abs(arg) > 1 + 1e-12):
        raise CostDomainError("great-circle cosine outside [-1, 1]")
    return np.arccos(np.clip(arg, -1.0, 1.0)) ** 2


def cost_eval(spec: CostSpec, x, y) -> float:
    """Cost between two single points."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    return float(cost_rows(spec, x, y))


def cost_grad_y(spec: CostSpec, x, y) -> np.ndarray:
    """Analytic ``d c(x, y) / d y`` row-wise."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if spec.kind == "sq_euclidean":
        return 2.0 * (y - x)
    if spec.kind == "weighted_quadratic":
        return 2.0 * (y - x) @ spec.Q
    return _gc_grads(x, y)[1]


def _gc_grads(x, y):
    lon1, lat1 = x[:, 0], x[:, 1]
    lon2, lat2 = y[:, 0], y[:, 1]
    arg = np.clip(_gc_cos(x, y), -1.0, 1.0)
    dist = np.arccos(arg)
    safe = np.abs(arg) < 1.0 - _ACOS_GUARD
    # d c / d arg = 2 d * (-1/sqrt(1-arg^2)); zeroed near the poles of arccos
    dc = np.where(safe, -2.0 * dist / np.sqrt(np.where(safe, 1.0 - arg * arg, 1.0)), 0.0)
    dlon = lon1 - lon2
    da_dlon1 = -np.cos(lat1) * np.cos(lat2) * np.sin(dlon)
    da_dlat1 = np.cos(lat1) * np.sin(lat2) - np.sin(lat1) * np.cos(lat2) * np.cos(dlon)
    da_dlon2 = -da_dlon1
    da_dlat2 = np.sin(lat1) * np.cos(lat2) - np.cos(lat1) * np.sin(lat2) * np.cos(dlon)
    gx = np.stack([dc * da_dlon1, dc * da_dlat1], axis=1)
    gy = np.stack([dc * da_dlon2, dc * da_dlat2], axis=1)
    return gx, gy


def cost_node(spec: CostSpec, x, y) -> Node:
    """Differentiable row-wise cost, shape (n,)."""
    x = x if isinstance(x, Node) else ad.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    y = y if isinstance(y, Node) else ad.constant(np.atleast_2d(np.asarray(y, dtype=np.float64)))
    if x.shape != y.shape:
        raise DimensionError(f"cost operands differ in shape: {x.shape} vs {y.shape}")
    if spec.kind == "sq_euclidean":
        d = ad.sub(x, y)
        return ad.reduce_sum(ad.square(d), axis=1)
    if spec.kind == "weighted_quadratic":
        Q = spec.Q
        if Q.shape[0] != x.shape[1]:
            raise DimensionError("Q does not match point dimension")
        return ad.custom_fwd(
            "weighted_quadratic", (x, y),
            lambda vx, vy: np.einsum("ni,ij,nj->n", vx - vy, Q, vx - vy),
            lambda g, vx, vy: (2.0 * g[:, None] * ((vx - vy) @ Q),
                               -2.0 * g[:, None] * ((vx - vy) @ Q)),
        )
    if x.shape[1] != 2:
        raise DimensionError("great-circle cost needs (longitude, latitude) points")

    def vjp(g, vx, vy):
        gx, gy = _gc_grads(vx, vy)
        return g[:, None] * gx, g[:, None] * gy

    return ad.custom_fwd("sq_great_circle", (x, y), lambda vx, vy: cost_rows(spec, vx, vy), vjp)
