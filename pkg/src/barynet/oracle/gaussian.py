"""Closed-form Gaussian transport quantities and the Gaussian barycenter fixed point."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class ConvergenceError(RuntimeError):
    pass


def psd_sqrt(S, floor_warn: float = 1e-8) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition.

    Negative eigenvalues are floored to zero; a warning is emitted if the
    floored amount exceeds ``floor_warn``.
    """
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    if vals.min() < -floor_warn:
        warnings.warn(f"matrix not PSD (min eigenvalue {vals.min():.3g}); flooring to 0")
    vals = np.clip(vals, 0.0, None)
    R = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (R + R.T)


@dataclass(frozen=True, eq=False)
class GaussianSpec:
    mean: np.ndarray
    cov: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        S = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if S.shape != (m.size, m.size):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        vals, vecs = np.linalg.eigh(S)
        if vals.min() < -1e-12:
            raise ValueError("covariance must be positive semidefinite")
        if vals.min() < 0:
            S = (vecs * np.clip(vals, 0, None)) @ vecs.T
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", 0.5 * (S + S.T))

    @classmethod
    def isotropic(cls, mean, std: float, weight: float = 1.0) -> "GaussianSpec":
        m = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        return cls(m, std ** 2 * np.eye(m.size), weight)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def variance(self) -> float:
        return float(np.trace(self.cov))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.cov, size=n, method="eigh")


def gaussian_w2(a: GaussianSpec, b: GaussianSpec) -> float:
    """Squared 2-Wasserstein distance between two Gaussians."""
    ra = psd_sqrt(a.cov)
    cross = psd_sqrt(ra @ b.cov @ ra)
    d = a.mean - b.mean
    val = float(d @ d + np.trace(a.cov + b.cov - 2.0 * cross))
    return max(val, 0.0)


def gaussian_barycenter_fixed_point(components, weights=None, tol: float = 1e-10,
                                    max_iter: int = 10_000, return_info: bool = False):
    """Barycenter of Gaussians: weighted mean of means, covariance by Picard iteration.

    Iterates ``S <- sum_k w_k sqrt(sqrt(S) S_k sqrt(S))`` from ``sum_k w_k S_k``
    until the Frobenius change drops below ``tol``.
    """
    comps = list(components)
    if not comps:
        raise ValueError("need at least one component")
    w = np.array([c.weight for c in comps] if weights is None else weights, dtype=np.float64)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    if not any(np.linalg.eigvalsh(c.cov).min() > 0 for c, wk in zip(comps, w) if wk > 0):
        raise ValueError("at least one positively weighted component must be non-degenerate")
    mean = sum(wk * c.mean for c, wk in zip(comps, w))
    covs = [c.cov for c in comps]
    S = sum(wk * Sk for Sk, wk in zip(covs, w))
    history = []
    residual = np.inf
    for it in range(1, max_iter + 1):
        R = psd_sqrt(S)
        S_new = sum(wk * psd_sqrt(R @ Sk @ R) for Sk, wk in zip(covs, w))
        residual = float(np.linalg.norm(S_new - S))
        S = S_new
        history.append(residual)
        if residual < tol:
            break
        if it > 100 and history[-101] > 0 and (history[-101] - residual) / history[-101] < 1e-14:
            raise ConvergenceError(f"fixed point stalled at residual {residual:.3g}")
    else:
        raise ConvergenceError(f"no convergence after {max_iter} iterations (residual {residual:.3g})")
    bary = GaussianSpec(mean, S)
    if return_info:
        return bary, {"iterations": it, "residual": residual}
    return bary


def fixed_point_residual(bary: GaussianSpec, components, weights=None) -> float:
    """Frobenius norm of ``S - sum_k w_k sqrt(sqrt(S) S_k sqrt(S))``."""
    comps = list(components)
    w = np.array([c.weight for c in comps] if weights is None else weights, dtype=np.float64)
    R = psd_sqrt(bary.cov)
    rhs = sum(wk * psd_sqrt(R @ c.cov @ R) for c, wk in zip(comps, w))
    return float(np.linalg.norm(bary.cov - rhs))


def mixture_variance(components, weights=None) -> float:
    """Total variance of the mixture ``sum_k w_k N(m_k, S_k)``."""
    comps = list(components)
    w = np.array([c.weight for c in comps] if weights is None else weights, dtype=np.float64)
    mean = sum(wk * c.mean for c, wk in zip(comps, w))
    return float(sum(wk * (np.trace(c.cov) + np.sum((c.mean - mean) ** 2))
                     for c, wk in zip(comps, w)))
