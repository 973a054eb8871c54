"""Time integration of the phase-kinetics ODEs at a single material point.

Two schemes share one correction function: forward Euler with a posteriori
correction, and Crank-Nicolson solved by fixed-point iteration under WRMS
control.  Macro steps larger than the subcycle cap are split into equal
substeps with linearly interpolated temperature.  The stuck compositions
(fresh beta, and the 90% alpha_s / 10% beta solid) are left through the
closed-form logistic initiation solution, tracked as a shifted fraction so
values far below machine epsilon of 1 survive.

The step functions wrap the width-1 specialization of the batch lane kernel,
so the scalar path and batch lanes are the same compiled arithmetic.
"""

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from . import batch
from .batch import (
    _NW,
    _NWI,
    SCHEME_CRANK_NICOLSON,
    SCHEME_EXPLICIT,
    SEED_ALPHA_S_TO_BETA,
    SEED_BETA_TO_ALPHA_S,
    BatchConvergenceError,
    KernelIntegratorConfig,
    _num_substeps,
    _workspace,
    run_range,
)
from .fastmath import fast_pow
from .kinetics import (
    DEFAULT_PARAMS,
    X_ALPHA_MAX,
    PhaseState,
    apply_corrections,
    compute_rates,
    diffusion_rate_k,
    liquid_fraction,
    solid_fraction,
    x_alpha_eq,
)

__all__ = [
    "IntegratorConfig",
    "SeedingState",
    "FixedPointDivergence",
    "wrms_norm",
    "step_explicit",
    "step_crank_nicolson",
    "initiate_diffusion",
    "integrate_interval",
    "integrate_history",
]

_DIRECTION_CODE = {
    None: batch.SEED_NONE,
    "beta_to_alpha_s": SEED_BETA_TO_ALPHA_S,
    "alpha_s_to_beta": SEED_ALPHA_S_TO_BETA,
}
_DIRECTION_NAME = {v: k for k, v in _DIRECTION_CODE.items()}


@dataclass(frozen=True)
class IntegratorConfig:
    """Scheme selection and tolerances for the kinetics integrators."""

    scheme: str = "explicit"
    dt_sub_max: float = 0.01          # s, subcycle cap
    eps_abs: float = 1e-10
    eps_rel: float = 1e-3
    max_fixed_point_iters: int = 50
    initiation_threshold: float = 1e-15  # hand-off: tracked * dt must exceed this
    stuck_tol: float = 1e-14          # componentwise stuck-state detection tolerance
    max_halvings: int = 5             # implicit retry policy before hard error

    def __post_init__(self):
        if self.scheme not in ("explicit", "crank_nicolson"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt_sub_max <= 0 or self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValueError("dt_sub_max and tolerances must be positive")

    @property
    def scheme_code(self):
        return SCHEME_EXPLICIT if self.scheme == "explicit" else SCHEME_CRANK_NICOLSON

    def with_overrides(self, **kwargs):
        return replace(self, **kwargs)

    def kernel_tuple(self, scheme_code=None, max_halvings=None):
        return KernelIntegratorConfig(
            scheme=self.scheme_code if scheme_code is None else scheme_code,
            dt_sub_max=self.dt_sub_max,
            eps_abs=self.eps_abs,
            eps_rel=self.eps_rel,
            max_fixed_point_iters=self.max_fixed_point_iters,
            initiation_threshold=self.initiation_threshold,
            stuck_tol=self.stuck_tol,
            max_halvings=self.max_halvings if max_halvings is None else max_halvings,
        )


@dataclass
class SeedingState:
    """Analytic-initiation bookkeeping for one point.

    `tracked` is the shifted fraction: X_beta - 0.1 while dissolving alpha_s
    into beta, and X_alpha_s itself while growing alpha_s from fresh beta.
    """

    active: bool = False
    direction: str = None
    tracked: float = 0.0


class FixedPointDivergence(BatchConvergenceError):
    """Crank-Nicolson fixed-point iteration failed; carries the last iterate."""

    def __init__(self, state, residual_norm, iters):
        self.state = state
        self.residual_norm = residual_norm
        self.iters = iters
        super().__init__([0], f"no convergence after {iters} iterations "
                              f"(WRMS residual {residual_norm:.3e}); last iterate {state}")


def wrms_norm(residual, reference, config=IntegratorConfig()):
    """(1/N) sum (a_j w_j)^2 with w_j = 1/(eps_abs + |ref_j| eps_rel), as printed (no root)."""
    residual = np.asarray(residual, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    w = 1.0 / (config.eps_abs + np.abs(reference) * config.eps_rel)
    return float(np.mean((residual * w) ** 2))


# --------------------------------------------------------------------------
# scalar steps through the width-1 lane kernel
# --------------------------------------------------------------------------

def _mini_fields(state, t_n, t_np1, seeding):
    f = batch.GlobalFields(
        np.array([state.x_alpha_s]), np.array([state.x_alpha_m]),
        np.array([state.x_beta]), np.array([float(t_n)]), np.array([float(t_np1)]))
    if seeding is not None and seeding.active:
        f.seed_active[0] = 1
        f.seed_direction[0] = _DIRECTION_CODE[seeding.direction]
        f.seed_tracked[0] = seeding.tracked
    return f


def _sync_seeding(seeding, f):
    if seeding is not None:
        seeding.active = bool(f.seed_active[0])
        seeding.direction = _DIRECTION_NAME[int(f.seed_direction[0])] if seeding.active else None
        seeding.tracked = float(f.seed_tracked[0])


def _run_single(state, t_n, t_np1, dt, params, config, seeding, scheme_code,
                nsub, max_halvings, record_iters):
    f = _mini_fields(state, t_n, t_np1, seeding)
    cfg = config.kernel_tuple(scheme_code=scheme_code, max_halvings=max_halvings)
    kp = params.kernel_tuple()
    iters_out = np.zeros(1, dtype=np.int64)
    W, WI = _workspace(1)
    rc = run_range(f.x_alpha_s, f.x_alpha_m, f.x_beta,
                   f.temperature_old, f.temperature_new,
                   f.seed_tracked, f.seed_active, f.seed_direction,
                   0, 1, 1, nsub, dt / nsub, cfg, kp,
                   record_iters, iters_out, W, WI)
    _sync_seeding(seeding, f)
    out = PhaseState(float(f.x_alpha_s[0]), float(f.x_alpha_m[0]), float(f.x_beta[0]))
    return out, int(iters_out[0]), rc


def step_explicit(state, t_n, t_np1, dt, params=DEFAULT_PARAMS,
                  config=IntegratorConfig(), seeding=None):
    """One forward-Euler step of size dt followed by the correction pass.

    Detects stuck compositions and advances them with the analytic initiation
    solution instead; pass a SeedingState to carry that tracking across steps.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out, _, _ = _run_single(state, t_n, t_np1, dt, params, config, seeding,
                            SCHEME_EXPLICIT, nsub=1, max_halvings=0, record_iters=False)
    return out


def step_crank_nicolson(state, t_n, t_np1, dt, params=DEFAULT_PARAMS,
                        config=IntegratorConfig(scheme="crank_nicolson"), seeding=None):
    """One Crank-Nicolson step of size dt; returns (state, fixed-point iterations).

    Raises FixedPointDivergence (carrying the last corrected iterate and its
    residual norm) when the iteration exceeds max_fixed_point_iters; the
    caller may halve dt and retry, which integrate_interval automates.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    out, iters, rc = _run_single(state, t_n, t_np1, dt, params, config, seeding,
                                 SCHEME_CRANK_NICOLSON, nsub=1, max_halvings=0,
                                 record_iters=True)
    if rc != 0:
        r = compute_rates(out, t_np1, params)
        prev = compute_rates(state, t_n, params)
        resid = [0.5 * dt * (r.d_x_alpha_s + prev.d_x_alpha_s),
                 0.5 * dt * (r.d_x_alpha_m + prev.d_x_alpha_m)]
        norm = wrms_norm(resid, [out.x_alpha_s, out.x_alpha_m], config)
        raise FixedPointDivergence(out, norm, iters)
    return out, iters


def initiate_diffusion(state, t, dt, seeding, params=DEFAULT_PARAMS,
                       config=IntegratorConfig()):
    """Advance a stuck composition by the closed-form initiation solution.

    Activates on the two stuck states (fresh beta with X_alpha_eq > 0, and
    the 0.9/0/0.1 solid with X_alpha_eq < 0.9), integrates the shifted
    fraction exactly for constant temperature, and deactivates once
    tracked*dt exceeds the initiation threshold so the rate equations take
    over.  The tracked fraction lives in `seeding`, independent of the
    continuity constraint.  Returns (state', seeding').
    """
    seeding = replace(seeding) if seeding is not None else SeedingState()
    t = float(t)
    xaeq = x_alpha_eq(t, params)
    g = liquid_fraction(t, params)
    xsol = 1.0 - g
    tol = config.stuck_tol

    if seeding.active:
        if seeding.direction == "beta_to_alpha_s":
            if xaeq <= 0.0 or t < params.t_alpha_m_start or g > 0.0:
                seeding = SeedingState()
        else:
            if xaeq >= X_ALPHA_MAX - 1e-12 or g > 0.0:
                seeding = SeedingState()
    if not seeding.active:
        if abs(state.x_alpha_m) <= tol and g == 0.0:
            if (abs(state.x_alpha_s) <= tol and abs(state.x_beta - xsol) <= tol
                    and xaeq > 0.0 and t >= params.t_alpha_m_start):
                seeding = SeedingState(True, "beta_to_alpha_s", max(state.x_alpha_s, 0.0))
            elif (abs(state.x_alpha_s - X_ALPHA_MAX) <= tol
                    and abs(state.x_beta - 0.1) <= tol and xaeq < X_ALPHA_MAX - 1e-12):
                seeding = SeedingState(True, "alpha_s_to_beta", max(state.x_beta - 0.1, 0.0))
    if not seeding.active:
        return state, seeding

    k_as, k_b = diffusion_rate_k(t, params)
    if seeding.direction == "beta_to_alpha_s":
        delta, k, c = xaeq, k_as, params.c_alpha_s
    else:
        delta, k, c = X_ALPHA_MAX - xaeq, k_b, params.c_beta
    xi = seeding.tracked / delta
    xi = min(max(xi, 0.0), 1.0 - 1e-12)
    term = fast_pow(xi / (1.0 - xi), 1.0 / c) if xi > 0.0 else 0.0
    denom = delta * k * dt + c * term
    tracked = delta / (1.0 + fast_pow(c / denom, c))
    active = not (tracked * dt > config.initiation_threshold)
    if seeding.direction == "beta_to_alpha_s":
        out = PhaseState(tracked, 0.0, xsol - tracked)
    else:
        out = PhaseState(X_ALPHA_MAX - tracked, 0.0, 0.1 + tracked)
    return out, SeedingState(active, seeding.direction, tracked)


def integrate_interval(state, t_n, t_np1, dt_macro, params=DEFAULT_PARAMS,
                       config=IntegratorConfig(), seeding=None):
    """Advance one point over a macro step, subcycling past dt_sub_max.

    Temperature is interpolated linearly across the equal substeps; the
    configured scheme is chained.  Implicit non-convergence triggers substep
    halving (up to config.max_halvings) before a hard error.
    """
    if dt_macro <= 0:
        raise ValueError("dt_macro must be positive")
    nsub = int(_num_substeps(float(dt_macro), config.dt_sub_max))
    out, _, rc = _run_single(state, t_n, t_np1, dt_macro, params, config, seeding,
                             config.scheme_code, nsub=nsub,
                             max_halvings=config.max_halvings, record_iters=False)
    if rc != 0:
        raise BatchConvergenceError([0], "implicit substep failed after all halvings")
    return out


def analytic_beta_growth(t_hold, dt, n_steps, params=DEFAULT_PARAMS):
    """Closed-form X_beta trajectory from (0.9, 0, 0.1) at constant temperature.

    Exact solution of the dissolution rate equation; times are k*dt for
    k = 1..n_steps.  Returns (times, x_beta) for oracle comparisons.
    """
    xaeq = x_alpha_eq(float(t_hold), params)
    _, k_b = diffusion_rate_k(float(t_hold), params)
    delta = X_ALPHA_MAX - xaeq
    c = params.c_beta
    times = dt * np.arange(1, n_steps + 1)
    u = delta * k_b * times / c
    xi = 1.0 / (1.0 + u ** (-c))
    return times, 0.1 + delta * xi


def integrate_history(times, temps, state0=None, params=DEFAULT_PARAMS,
                      config=IntegratorConfig(), record_every=1):
    """Integrate the kinetics along a prescribed temperature history.

    `times` must be strictly increasing.  The initial state defaults to fresh
    solid material equilibrated at temps[0] (a correction pass applied to
    all-beta).  Returns an (n, 3) array of phase fractions at each time.
    """
    times = np.ascontiguousarray(times, dtype=np.float64)
    temps = np.ascontiguousarray(temps, dtype=np.float64)
    if times.ndim != 1 or times.shape != temps.shape:
        raise ValueError("times and temps must be 1-D arrays of equal length")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if state0 is None:
        state0 = apply_corrections(PhaseState(0.0, 0.0, solid_fraction(temps[0], params)),
                                   temps[0], params)
    out = np.empty((len(times), 3))
    cfg = config.kernel_tuple()
    kp = params.kernel_tuple()
    _history_kernel(times, temps, state0.x_alpha_s, state0.x_alpha_m, state0.x_beta,
                    cfg, kp, out)
    return out


@njit(error_model="numpy", cache=True)
def _history_kernel(times, temps, xs0, xm0, xb0, cfg, kp, out):
    xs = np.empty(1)
    xm = np.empty(1)
    xb = np.empty(1)
    t0 = np.empty(1)
    t1 = np.empty(1)
    tr = np.zeros(1)
    ac = np.zeros(1, dtype=np.uint8)
    dr = np.zeros(1, dtype=np.uint8)
    iters = np.zeros(1, dtype=np.int64)
    W = np.zeros((_NW, 1))
    WI = np.zeros((_NWI, 1), dtype=np.uint8)
    xs[0] = xs0
    xm[0] = xm0
    xb[0] = xb0
    t0[0] = temps[0]
    out[0, 0] = xs0
    out[0, 1] = xm0
    out[0, 2] = xb0
    for k in range(1, times.shape[0]):
        dt = times[k] - times[k - 1]
        t1[0] = temps[k]
        nsub = _num_substeps(dt, cfg.dt_sub_max)
        rc = run_range(xs, xm, xb, t0, t1, tr, ac, dr, 0, 1, 1,
                       nsub, dt / nsub, cfg, kp, False, iters, W, WI)
        if rc != 0:
            out[k, 0] = np.nan
            out[k, 1] = np.nan
            out[k, 2] = np.nan
            return
        out[k, 0] = xs[0]
        out[k, 1] = xm[0]
        out[k, 2] = xb[0]
