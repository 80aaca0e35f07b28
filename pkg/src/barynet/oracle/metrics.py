"""Two-sample distances and correlation used as acceptance metrics."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist


def _points(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    A = A[:, None] if A.ndim == 1 else A
    if len(A) == 0:
        raise ValueError("point sets must be nonempty")
    return A


def energy_distance(A, B) -> float:
    """V-statistic energy distance ``2E|X-Y| - E|X-X'| - E|Y-Y'|``."""
    A, B = _points(A), _points(B)
    val = 2.0 * cdist(A, B).mean() - cdist(A, A).mean() - cdist(B, B).mean()
    return max(float(val), 0.0)


def w2_1d(a, b) -> float:
    """Exact squared W2 between two 1-D empirical measures with uniform masses."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if len(a) == len(b):
        return float(np.mean((a - b) ** 2))
    # merge the two quantile step functions
    ts = np.union1d(np.arange(1, len(a) + 1) / len(a), np.arange(1, len(b) + 1) / len(b))
    widths = np.diff(np.concatenate([[0.0], ts]))
    mids = ts - widths / 2
    qa = a[np.minimum((mids * len(a)).astype(int), len(a) - 1)]
    qb = b[np.minimum((mids * len(b)).astype(int), len(b) - 1)]
    return float(np.sum(widths * (qa - qb) ** 2))


def sliced_w2(A, B, n_projections: int = 50, seed: int = 0) -> float:
    """Mean exact 1-D W2^2 over random unit directions (the single axis when d = 1)."""
    A, B = _points(A), _points(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError("point sets must share a dimension")
    d = A.shape[1]
    if d == 1:
        return w2_1d(A[:, 0], B[:, 0])
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = A @ dirs.T, B @ dirs.T
    return float(np.mean([w2_1d(pa[:, k], pb[:, k]) for k in range(n_projections)]))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) != len(b) or len(a) == 0:
        raise ValueError("pearson needs two nonempty sequences of equal length")
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt(da @ da), np.sqrt(db @ db)
    if na == 0 or nb == 0:
        raise ValueError("pearson is undefined for a zero-variance input")
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))
