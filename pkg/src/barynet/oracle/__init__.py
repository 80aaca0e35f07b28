"""Independent ground truth: Gaussian closed forms, exact discrete OT, reference statistics."""
from .gaussian import (ConvergenceError, GaussianSpec, fixed_point_residual,
                       gaussian_barycenter_fixed_point, gaussian_w2, mixture_variance, psd_sqrt)
from .lp import (DiscreteDist, InfeasibleError, discrete_ot_lp, enumerate_permutation_plans,
                 transport_simplex)
from .metrics import energy_distance, pearson, sliced_w2, w2_1d
from .reference import (UnsupportedFamilyError, kmeans_reference, variance_decomposition_check,
                        weighted_variance)
from .validate import run_suite

__all__ = [
    "ConvergenceError", "DiscreteDist", "GaussianSpec", "InfeasibleError",
    "UnsupportedFamilyError", "discrete_ot_lp", "energy_distance",
    "enumerate_permutation_plans", "fixed_point_residual", "gaussian_barycenter_fixed_point",
    "gaussian_w2", "kmeans_reference", "mixture_variance", "pearson", "psd_sqrt", "run_suite",
    "sliced_w2", "transport_simplex", "variance_decomposition_check", "w2_1d",
    "weighted_variance",
]
