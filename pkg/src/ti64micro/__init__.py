"""Scan-resolved thermo-microstructure simulation of Ti-6Al-4V LPBF.

Predicts the evolution of the stable alpha_s, martensitic alpha_m and beta
phase fractions under laser powder bed fusion thermal histories, with
batch-vectorized kinetics kernels built on fast bit-synthesis approximations
of exp/ln/pow.
"""

__version__ = "0.1.0"

from .fastmath import fast_exp, fast_ln, fast_pow, estrin_eval
from .kinetics import (
    KineticsParams,
    PhaseState,
    DEFAULT_PARAMS,
    liquid_fraction,
    x_alpha_eq,
    x_alpha_m_eq,
    compute_rates,
    apply_corrections,
)
from .integrator import (
    IntegratorConfig,
    SeedingState,
    step_explicit,
    step_crank_nicolson,
    integrate_interval,
    integrate_history,
)
from .batch import GlobalFields, step_all, blend, branch_dispatch

__all__ = [
    "fast_exp", "fast_ln", "fast_pow", "estrin_eval",
    "KineticsParams", "PhaseState", "DEFAULT_PARAMS",
    "liquid_fraction", "x_alpha_eq", "x_alpha_m_eq",
    "compute_rates", "apply_corrections",
    "IntegratorConfig", "SeedingState",
    "step_explicit", "step_crank_nicolson",
    "integrate_interval", "integrate_history",
    "GlobalFields", "step_all", "blend", "branch_dispatch",
]
