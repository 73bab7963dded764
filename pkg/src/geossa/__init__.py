"""
geossa: geometry-aware stationary subspace analysis.

Finds the subspace in which epoch covariances of a multichannel signal stay
constant by minimizing SPD-manifold distances over the Grassmann manifold.
"""
from .errors import GeossaError
from .gassa import Gassa, GassaConfig, GassaResult, Reference, fit, gassa_cost, gassa_egrad, project_to_s_space, transform
from .manifold_opt import OptimizerOptions, Subspace, grassmann_dist, minimize, random_subspace
from .spd_core import MetricKind, airm_dist2, karcher_mean, stein_div, stein_mean, whiten_set
from .ssa_baseline import EpochStats, SsaConfig, fit_ssa

__version__ = "0.1.0"

__all__ = [
    "EpochStats",
    "Gassa",
    "GassaConfig",
    "GassaResult",
    "GeossaError",
    "MetricKind",
    "OptimizerOptions",
    "Reference",
    "SsaConfig",
    "Subspace",
    "airm_dist2",
    "fit",
    "fit_ssa",
    "gassa_cost",
    "gassa_egrad",
    "grassmann_dist",
    "karcher_mean",
    "minimize",
    "project_to_s_space",
    "random_subspace",
    "stein_div",
    "stein_mean",
    "transform",
    "whiten_set",
]
