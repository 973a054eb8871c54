"""Pointwise Ti-6Al-4V phase-fraction model.

Three constituents are tracked per material point: stable alpha_s, martensitic
alpha_m and beta.  Equilibrium fractions follow Koistinen-Marburger laws,
diffusional transformations follow logistic rate equations, and instantaneous
martensite formation/dissolution plus the continuity constraints are enforced
by the correction function applied after every integrator step.

The functions here are the plain numpy statement of the model (vectorized,
usable on scalars or arrays).  The batch module compiles the identical
arithmetic into lane kernels; the test suite holds both routes together.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .fastmath import fast_exp, fast_pow

__all__ = [
    "KineticsParams",
    "PhaseState",
    "PhaseRates",
    "DEFAULT_PARAMS",
    "liquid_fraction",
    "solid_fraction",
    "x_alpha_eq",
    "x_alpha_m_eq",
    "diffusion_rate_k",
    "compute_rates",
    "apply_corrections",
]

# Diffusional transformations stop entirely at a true-zero base; bases are
# clamped before fast_pow only to keep ln() in-domain on active branches.
_POW_FLOOR = 1e-300
X_ALPHA_MAX = 0.9


class KernelKineticsParams(NamedTuple):
    """Flat numeric view of KineticsParams consumed by compiled kernels."""

    t_liq: float
    t_sol: float
    t_as_start: float
    t_as_end: float
    t_am_start: float
    t_inf: float
    k_alpha_eq: float
    k_alpha_m_eq: float
    k1: float
    k2: float
    k3: float
    f: float
    t_as_reg: float
    exp_as_lo: float   # (c_as - 1)/c_as
    exp_as_hi: float   # (c_as + 1)/c_as
    exp_b_lo: float    # (c_b - 1)/c_b
    exp_b_hi: float    # (c_b + 1)/c_b
    c_alpha_s: float
    c_beta: float


@dataclass(frozen=True)
class KineticsParams:
    """Microstructure model parameters; defaults are the published Ti-6Al-4V set."""

    t_liq: float = 1928.0          # K
    t_sol: float = 1878.0          # K
    t_alpha_s_start: float = 1273.0  # K, upper end of beta->alpha_s window
    t_alpha_s_end: float = 935.0     # K, lower end of beta->alpha_s window
    t_alpha_m_start: float = 848.0   # K, upper end of beta->alpha_m window
    t_inf: float = 293.0           # K
    k_alpha_eq: float = 0.0068     # 1/K
    k_alpha_m_eq: float = 0.00415  # 1/K
    c_alpha_s: float = 2.51
    c_beta: float = 11.0
    k1: float = 0.294              # 1/s
    k2: float = 850.0              # K
    k3: float = 0.0337             # 1/K
    f: float = 3.8
    t_alpha_s_reg: float = 100.0   # K, regularization interval above t_alpha_s_start

    def with_overrides(self, **kwargs):
        return replace(self, **kwargs)

    def kernel_tuple(self):
        return KernelKineticsParams(
            t_liq=self.t_liq,
            t_sol=self.t_sol,
            t_as_start=self.t_alpha_s_start,
            t_as_end=self.t_alpha_s_end,
            t_am_start=self.t_alpha_m_start,
            t_inf=self.t_inf,
            k_alpha_eq=self.k_alpha_eq,
            k_alpha_m_eq=self.k_alpha_m_eq,
            k1=self.k1,
            k2=self.k2,
            k3=self.k3,
            f=self.f,
            t_as_reg=self.t_alpha_s_reg,
            exp_as_lo=(self.c_alpha_s - 1.0) / self.c_alpha_s,
            exp_as_hi=(self.c_alpha_s + 1.0) / self.c_alpha_s,
            exp_b_lo=(self.c_beta - 1.0) / self.c_beta,
            exp_b_hi=(self.c_beta + 1.0) / self.c_beta,
            c_alpha_s=self.c_alpha_s,
            c_beta=self.c_beta,
        )


DEFAULT_PARAMS = KineticsParams()


@dataclass
class PhaseState:
    """Phase fractions at one material point.

    Continuity ties the fractions to the local liquid fraction:
    x_alpha_s + x_alpha_m + x_beta = 1 - g(T), and the alpha phases together
    never exceed 0.9.
    """

    x_alpha_s: float = 0.0
    x_alpha_m: float = 0.0
    x_beta: float = 0.0

    @property
    def x_alpha(self):
        return self.x_alpha_s + self.x_alpha_m

    def as_tuple(self):
        return (self.x_alpha_s, self.x_alpha_m, self.x_beta)


@dataclass
class PhaseRates:
    """Diffusional rates of the tracked alpha fractions (1/s)."""

    d_x_alpha_s: float = 0.0
    d_x_alpha_m: float = 0.0


def liquid_fraction(t, params=DEFAULT_PARAMS):
    """Liquid fraction g(T): 0 below solidus, linear ramp, 1 above liquidus."""
    t = np.asarray(t, dtype=np.float64)
    g = (t - params.t_sol) / (params.t_liq - params.t_sol)
    out = np.clip(g, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def solid_fraction(t, params=DEFAULT_PARAMS):
    """X_sol = 1 - g(T)."""
    g = liquid_fraction(t, params)
    return 1.0 - g


def x_alpha_eq(t, params=DEFAULT_PARAMS):
    """Equilibrium total-alpha fraction (Koistinen-Marburger in the alpha_s window)."""
    t = np.asarray(t, dtype=np.float64)
    ramp = 1.0 - fast_exp(-params.k_alpha_eq * (params.t_alpha_s_start - t))
    out = np.where(t < params.t_alpha_s_end, X_ALPHA_MAX,
                   np.where(t > params.t_alpha_s_start, 0.0, ramp))
    return float(out) if out.ndim == 0 else out


def x_alpha_m_eq(t, x_alpha_s, params=DEFAULT_PARAMS):
    """Effective martensite pseudo-equilibrium, reduced by already-formed alpha_s.

    The plateau at 0.9 (including the marginal overshoot of the printed
    expression below T_inf) is realized by clamping; above t_alpha_m_start the
    equilibrium is zero.  Guarantees x_alpha_s + result <= 0.9.
    """
    t = np.asarray(t, dtype=np.float64)
    x_alpha_s = np.asarray(x_alpha_s, dtype=np.float64)
    ramp = 1.0 - fast_exp(-params.k_alpha_m_eq * (params.t_alpha_m_start - t))
    base = np.where(t > params.t_alpha_m_start, 0.0, np.minimum(ramp, X_ALPHA_MAX))
    out = base * (X_ALPHA_MAX - x_alpha_s) / X_ALPHA_MAX
    return float(out) if out.ndim == 0 else out


def diffusion_rate_k(t, params=DEFAULT_PARAMS):
    """Logistic diffusion rate constants (k_alpha_s, k_beta) at temperature t."""
    t = np.asarray(t, dtype=np.float64)
    k_as = params.k1 / (1.0 + fast_exp(-params.k3 * (t - params.k2)))
    k_b = params.f * k_as
    if np.ndim(k_as) == 0:
        return float(k_as), float(k_b)
    return k_as, k_b


def _gated_pow(base, expo):
    """base**expo where base > 0, exactly 0 otherwise (true-zero bases kill a branch)."""
    base = np.asarray(base, dtype=np.float64)
    p = fast_pow(np.maximum(base, _POW_FLOOR), expo)
    return np.where(base > 0.0, p, 0.0)


def compute_rates(state, t, params=DEFAULT_PARAMS):
    """Diffusional rates for one state: beta->alpha_s, alpha_m->alpha_s, alpha_s->beta.

    Each branch contributes only while its driving condition holds; powers are
    evaluated through fast_pow on clamped bases.
    """
    xs = np.asarray(state.x_alpha_s if isinstance(state, PhaseState) else state[0], dtype=np.float64)
    xm = np.asarray(state.x_alpha_m if isinstance(state, PhaseState) else state[1], dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    k_as, k_b = diffusion_rate_k(t, params)
    xa = xs + xm
    xa_eq = x_alpha_eq(t, params)
    e_lo = (params.c_alpha_s - 1.0) / params.c_alpha_s
    e_hi = (params.c_alpha_s + 1.0) / params.c_alpha_s
    eb_lo = (params.c_beta - 1.0) / params.c_beta
    eb_hi = (params.c_beta + 1.0) / params.c_beta

    pxs = _gated_pow(xs, e_lo)
    growing = xa < xa_eq
    r_b_as = np.where(growing, k_as * pxs * _gated_pow(xa_eq - xa, e_hi), 0.0)
    r_am_as = np.where(xm > 0.0, k_as * pxs * _gated_pow(xm, e_hi), 0.0)
    dissolving = xa > xa_eq
    r_as_b = np.where(dissolving,
                      k_b * _gated_pow(X_ALPHA_MAX - xa, eb_lo) * _gated_pow(xa - xa_eq, eb_hi),
                      0.0)

    ds = r_b_as + r_am_as - r_as_b
    dm = -r_am_as
    if ds.ndim == 0:
        return PhaseRates(float(ds), float(dm))
    return PhaseRates(ds, dm)


def apply_corrections(state, t, params=DEFAULT_PARAMS):
    """Correction function g(T, m): instantaneous transformations and constraints.

    Fixed order: clamp negatives -> alpha_s regularization above the
    transformation window -> instantaneous martensite dissolution ->
    instantaneous martensite formation (monotone) -> cap total alpha at 0.9
    preserving the alpha_s/alpha_m ratio -> recompute beta from continuity.
    """
    if isinstance(state, PhaseState):
        xs = np.asarray(state.x_alpha_s, dtype=np.float64)
        xm = np.asarray(state.x_alpha_m, dtype=np.float64)
    else:
        xs = np.asarray(state[0], dtype=np.float64)
        xm = np.asarray(state[1], dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)

    xs = np.maximum(xs, 0.0)
    xm = np.maximum(xm, 0.0)

    ramp = X_ALPHA_MAX * (params.t_alpha_s_start + params.t_alpha_s_reg - t) / params.t_alpha_s_reg
    ramp = np.maximum(ramp, 0.0)
    xs = np.where(t > params.t_alpha_s_start, np.minimum(xs, ramp), xs)

    xa_eq = x_alpha_eq(t, params)
    xm = np.where(xs + xm > xa_eq, np.maximum(xa_eq - xs, 0.0), xm)

    xm_eq = x_alpha_m_eq(t, xs, params)
    xm = np.where(t < params.t_alpha_m_start, np.maximum(xm, xm_eq), xm)

    xa = xs + xm
    scale = np.where(xa > X_ALPHA_MAX, X_ALPHA_MAX / np.where(xa > 0.0, xa, 1.0), 1.0)
    xs = xs * scale
    xm = xm * scale

    xb = np.maximum(solid_fraction(t, params) - xs - xm, 0.0)
    if xs.ndim == 0:
        return PhaseState(float(xs), float(xm), float(xb))
    return PhaseState(xs, xm, xb)
