"""Variance decomposition, weighted variance and the k-means reference."""
from __future__ import annotations

import numpy as np
from sklearn.cluster import KMeans

from .gaussian import (GaussianSpec, gaussian_barycenter_fixed_point, gaussian_w2,
                       mixture_variance)
from .lp import DiscreteDist


class UnsupportedFamilyError(ValueError):
    pass


def weighted_variance(dist: DiscreteDist, Q=None) -> float:
    """``sum_i m_i (x_i - mean)^T Q (x_i - mean)`` over a discrete support."""
    d = dist.points - dist.mean
    if Q is None:
        return float(dist.masses @ np.sum(d * d, axis=1))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if not np.allclose(Q, Q.T, atol=1e-12) or np.linalg.eigvalsh(Q).min() <= 0:
        raise ValueError("Q must be symmetric positive definite")
    return float(dist.masses @ np.einsum("ij,jk,ik->i", d, Q, d))


def _w2_sorted_1d(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((np.sort(a) - np.sort(b)) ** 2))


def _discrete_decomposition(dists, w):
    pts = [d.points for d in dists]
    dim = pts[0].shape[1]
    if any(p.shape[1] != dim for p in pts):
        raise ValueError("conditionals must share a dimension")
    mixture = np.concatenate([wk * d.masses for d, wk in zip(dists, w)])
    allpts = np.concatenate(pts)
    mean = mixture @ allpts
    var_rho = float(mixture @ np.sum((allpts - mean) ** 2, axis=1))

    if all(len(d) == 1 for d in dists):
        centers = np.concatenate(pts)
        bary = w @ centers
        cost = float(w @ np.sum((centers - bary) ** 2, axis=1))
        return var_rho, 0.0, cost

    first = dists[0]
    if all(len(d) == len(first) and np.array_equal(d.points, first.points)
           and np.array_equal(d.masses, first.masses) for d in dists):
        return var_rho, first.variance, 0.0

    n = len(first)
    uniform = all(len(d) == n and np.allclose(d.masses, 1.0 / n, atol=1e-15) for d in dists)
    if dim == 1 and uniform:
        # 1-D barycenter: average of quantile functions
        sorted_pts = np.stack([np.sort(d.points[:, 0]) for d in dists])
        bary = w @ sorted_pts
        cost = float(sum(wk * _w2_sorted_1d(s, bary) for s, wk in zip(sorted_pts, w)))
        return var_rho, float(np.var(bary)), cost

    raise UnsupportedFamilyError(
        "discrete conditionals must be Diracs, identical, or 1-D uniform with equal sizes")


def variance_decomposition_check(labeled) -> float:
    """``|Var(rho) - Var(mu) - sum_k w_k W2^2(rho_k, mu)|`` for a weighted list of conditionals.

    ``labeled`` is a list of ``(dist, weight)`` with every ``dist`` a
    :class:`GaussianSpec` or every one a :class:`DiscreteDist`.
    """
    items = list(labeled)
    if not items:
        raise ValueError("need at least one conditional")
    dists = [d for d, _ in items]
    w = np.array([wk for _, wk in items], dtype=np.float64)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    if all(isinstance(d, GaussianSpec) for d in dists):
        bary = gaussian_barycenter_fixed_point(dists, w)
        var_rho = mixture_variance(dists, w)
        var_mu = bary.variance
        cost = float(sum(wk * gaussian_w2(d, bary) for d, wk in zip(dists, w)))
    elif all(isinstance(d, DiscreteDist) for d in dists):
        var_rho, var_mu, cost = _discrete_decomposition(dists, w)
    else:
        raise UnsupportedFamilyError("conditionals must all be Gaussian or all discrete")
    return abs(var_rho - var_mu - cost)


def kmeans_reference(points, K: int, seed: int = 0):
    """Lloyd iterations from k-means++ seeding; returns ``(labels, centers, SSE)``."""
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not 1 <= K <= len(X):
        raise ValueError("need 1 <= K <= N")
    km = KMeans(n_clusters=K, init="k-means++", n_init=1, algorithm="lloyd",
                tol=0.0, max_iter=1000, random_state=seed).fit(X)
    labels = km.labels_.astype(int)
    centers = km.cluster_centers_
    sse = float(np.sum((X - centers[labels]) ** 2))
    return labels, centers, sse
