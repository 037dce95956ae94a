"""Positivity-preserving discretization schemes for the mean-reverting CEV
process, with a Monte Carlo benchmark harness.

The process is  dx_t = (k1 - k2*x_t) dt + k3 * x_t**q dW_t  with 1/2 < q < 1,
started at x0 > 0.  The package provides several explicit and semi-implicit
one-step schemes that keep the discrete state nonnegative, classical
Euler-Maruyama and Milstein for comparison, two log-price schemes for a
stochastic-volatility model driven by the CEV variance, and estimators for
strong errors, inter-scheme distances, convergence orders, and per-path cost.
"""

from .asset_schemes import SvParams, ijk_step, log_euler_step, simulate_asset
from .cev_schemes import (
    AlfNonconvergenceError,
    PathResult,
    StepStats,
    alf_step,
    bim_step,
    bmm_step,
    em_step,
    hal_step,
    milstein_step,
    sd_step,
    simulate_path,
    simulate_terminal_block,
    solve_alf_transformed,
)
from .harness import (
    COUPLINGS,
    ErrorEstimate,
    OrderFit,
    PositivityStats,
    Z98,
    distance_profile,
    fit_order,
    negativity_stats,
    positivity_run,
    scheme_distance,
    strong_error,
    strong_error_profile,
    sv_error,
    sv_profile,
)
from .model import (
    ASSET_SCHEMES,
    POSITIVITY_PRESERVING,
    VARIANCE_SCHEMES,
    CevParams,
    GridSpec,
    SchemeConfig,
    SchemeId,
    ValidityReport,
    validate,
)
from .paths import (
    BrownianLattice,
    PathKey,
    coarsen,
    coarsen_array,
    correlate,
    correlate_arrays,
    generate_fine_increments,
    generate_increments,
    standard_normals,
    subsample_array,
)

__version__ = "0.1.0"

__all__ = [
    "ASSET_SCHEMES",
    "COUPLINGS",
    "AlfNonconvergenceError",
    "BrownianLattice",
    "CevParams",
    "ErrorEstimate",
    "GridSpec",
    "OrderFit",
    "POSITIVITY_PRESERVING",
    "PathKey",
    "PathResult",
    "PositivityStats",
    "SchemeConfig",
    "SchemeId",
    "StepStats",
    "SvParams",
    "VARIANCE_SCHEMES",
    "ValidityReport",
    "Z98",
    "alf_step",
    "bim_step",
    "bmm_step",
    "coarsen",
    "coarsen_array",
    "correlate",
    "correlate_arrays",
    "distance_profile",
    "em_step",
    "fit_order",
    "generate_fine_increments",
    "generate_increments",
    "hal_step",
    "ijk_step",
    "log_euler_step",
    "milstein_step",
    "negativity_stats",
    "positivity_run",
    "scheme_distance",
    "sd_step",
    "simulate_asset",
    "simulate_path",
    "simulate_terminal_block",
    "solve_alf_transformed",
    "subsample_array",
    "standard_normals",
    "strong_error",
    "strong_error_profile",
    "sv_error",
    "sv_profile",
    "validate",
]
