"""Self-contained oracle suite; every check yields ``{check_name, residual, pass}``."""
from __future__ import annotations

import numpy as np

from .gaussian import (GaussianSpec, fixed_point_residual, gaussian_barycenter_fixed_point,
                       gaussian_w2, psd_sqrt)
from .lp import DiscreteDist, discrete_ot_lp, enumerate_permutation_plans, transport_simplex
from .reference import variance_decomposition_check


def random_spd(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T / d + 0.1 * np.eye(d))


def random_gaussian_instance(rng, d=None, K=None):
    d = int(rng.integers(1, 4)) if d is None else d
    K = int(rng.integers(2, 6)) if K is None else K
    w = rng.dirichlet(np.ones(K))
    return [GaussianSpec(rng.standard_normal(d), random_spd(rng, d), wk) for wk in w]


def random_lp_instance(rng):
    n = int(rng.integers(1, 5))
    d = int(rng.integers(1, 4))
    C = np.sum((rng.standard_normal((n, 1, d)) - rng.standard_normal((1, n, d))) ** 2, axis=2)
    return np.full(n, 1.0 / n), C


def _check(name, residual, tol):
    residual = float(residual)
    return {"check_name": name, "residual": residual, "pass": bool(residual < tol)}


def run_suite(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []

    iso = gaussian_barycenter_fixed_point(
        [GaussianSpec.isotropic([0.0], 1.0, 0.5), GaussianSpec.isotropic([0.0], 3.0, 0.5)])
    out.append(_check("gaussian_isotropic_std_average", abs(np.sqrt(iso.cov[0, 0]) - 2.0), 1e-8))

    com = gaussian_barycenter_fixed_point(
        [GaussianSpec([0, 0], np.diag([1.0, 4.0]), 0.5), GaussianSpec([0, 0], np.diag([9.0, 16.0]), 0.5)])
    out.append(_check("gaussian_commuting_closed_form",
                      np.abs(com.cov - np.diag([4.0, 9.0])).max(), 1e-8))

    worst_fp, worst_mean = 0.0, 0.0
    for _ in range(10):
        comps = random_gaussian_instance(rng)
        bary = gaussian_barycenter_fixed_point(comps)
        worst_fp = max(worst_fp, fixed_point_residual(bary, comps))
        w = np.array([c.weight for c in comps])
        worst_mean = max(worst_mean, np.abs(bary.mean - w @ np.stack([c.mean for c in comps])).max())
    out.append(_check("gaussian_fixed_point_residual", worst_fp, 1e-10))
    out.append(_check("gaussian_barycenter_mean_identity", worst_mean, 1e-12))

    worst_sqrt = 0.0
    for _ in range(10):
        S = random_spd(rng, int(rng.integers(1, 6)))
        R = psd_sqrt(S)
        worst_sqrt = max(worst_sqrt, np.linalg.norm(R @ R - S))
    out.append(_check("matrix_sqrt_square", worst_sqrt, 1e-10))

    out.append(_check("gaussian_w2_translation",
                      abs(gaussian_w2(GaussianSpec([0.0], [[1.0]]), GaussianSpec([3.0], [[1.0]])) - 9.0),
                      1e-12))
    out.append(_check("gaussian_w2_scale",
                      abs(gaussian_w2(GaussianSpec([0.0], [[1.0]]), GaussianSpec([0.0], [[9.0]])) - 4.0),
                      1e-12))

    dirac = variance_decomposition_check(
        [(DiscreteDist([[-1.0]]), 0.5), (DiscreteDist([[1.0]]), 0.5)])
    out.append(_check("variance_decomposition_diracs", dirac, 1e-6))
    same = DiscreteDist(rng.standard_normal((5, 2)))
    out.append(_check("variance_decomposition_identical",
                      variance_decomposition_check([(same, 0.3), (same, 0.7)]), 1e-6))
    worst_vd = max(variance_decomposition_check([(c, c.weight) for c in random_gaussian_instance(rng)])
                   for _ in range(10))
    out.append(_check("variance_decomposition_gaussians", worst_vd, 1e-6))

    worst_gap, worst_marg = 0.0, 0.0
    for _ in range(50):
        m, C = random_lp_instance(rng)
        cost, plan = transport_simplex(m, m, C)
        best, _ = enumerate_permutation_plans(C)
        worst_gap = max(worst_gap, abs(cost - best))
        worst_marg = max(worst_marg, np.abs(plan.sum(1) - m).max(), np.abs(plan.sum(0) - m).max())
    out.append(_check("lp_matches_permutation_enumeration", worst_gap, 1e-9))
    out.append(_check("lp_plan_marginals", worst_marg, 1e-10))

    mono, _ = discrete_ot_lp(DiscreteDist([[0.0], [1.0], [2.0]]), DiscreteDist([[0.5], [1.5], [2.5]]))
    out.append(_check("lp_monotone_1d", abs(mono - 0.25), 1e-12))
    return out
