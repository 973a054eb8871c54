"""Structure-of-arrays lane-batched driver for the phase-kinetics integrators.

Points live in five contiguous global vectors (x_alpha_s, x_alpha_m, x_beta,
temperature_old, temperature_new).  One microstructure step loads a lane slice
of all five, integrates locally (subcycling included, so substeps cost no
extra memory traffic), and stores four of them back, with temperature_old
taking temperature_new's value in the same pass: 5 loads + 4 stores = 72
bytes/point = 24 bytes/DoF.

Conditional model branches are handled with the three-scenario dispatch: a
condition mask is computed per lane batch; branches nobody needs are skipped,
branches somebody needs are evaluated on all lanes and blended by the mask.
The per-point analytic seeding state needed to leave the stuck compositions
adds one byte/point of read traffic outside that 72-byte budget (plus writes
only on the rare activation/hand-off transitions).

The same compiled kernel serves every lane width (1, 2, 4 and 8) and the
scalar integrator API; per-lane arithmetic is width-independent (explicit
fused multiply-adds, no reassociation), so batch explicit output is
bit-identical to the scalar path.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit, prange

from .fastmath import fast_exp_scalar, fast_ln_scalar, fast_pow_scalar

__all__ = [
    "SUPPORTED_LANES",
    "GlobalFields",
    "LaneBatch",
    "blend",
    "branch_dispatch",
    "step_all",
    "BatchConvergenceError",
]

SUPPORTED_LANES = (1, 2, 4, 8)

SCHEME_EXPLICIT = 0
SCHEME_CRANK_NICOLSON = 1

BYTES_PER_POINT = 72  # 5 loads + 4 stores of 8 B
DOF_PER_POINT = 3

_POW_FLOOR = 1e-300
_XA_MAX = 0.9

# direction codes in the seeding arrays
SEED_NONE = 0
SEED_BETA_TO_ALPHA_S = 1
SEED_ALPHA_S_TO_BETA = 2

_JIT = {"error_model": "numpy", "cache": True}

# workspace rows (W[row] is one lane array)
_NW = 43
(_LXS, _LXM, _LXB, _LT0, _LT1, _LDT,
 _ST0, _ST1, _PT0, _PT1,
 _G1, _XSOL1, _XAEQ1, _KAS1, _XMEQB1,
 _XAEQ0, _KAS0, _LTR,
 _DSN, _DMN, _DSI, _DMI, _DSX, _DMX,
 _CXS, _CXM, _CXB,
 _PXS, _PA, _PB, _PC, _PD,
 _BXS, _BXM, _BXB, _BTR,
 _EXS, _EXM, _EXB,
 _SXS, _SXM, _SXB, _ITC) = range(_NW)
_NWI = 5  # uint8 rows: seed active/direction, their backups, CN converged mask


class BatchConvergenceError(RuntimeError):
    """Implicit fixed-point iteration failed to converge for some points."""

    def __init__(self, indices, message=None):
        self.indices = list(indices)
        super().__init__(message or f"fixed-point iteration failed at point indices {self.indices}")


class KernelIntegratorConfig(NamedTuple):
    """Flat numeric view of IntegratorConfig consumed by compiled kernels."""

    scheme: int
    dt_sub_max: float
    eps_abs: float
    eps_rel: float
    max_fixed_point_iters: int
    initiation_threshold: float
    stuck_tol: float
    max_halvings: int


# --------------------------------------------------------------------------
# global fields
# --------------------------------------------------------------------------

@dataclass
class GlobalFields:
    """The five global state vectors plus per-point seeding bookkeeping."""

    x_alpha_s: np.ndarray
    x_alpha_m: np.ndarray
    x_beta: np.ndarray
    temperature_old: np.ndarray
    temperature_new: np.ndarray
    seed_tracked: np.ndarray = None
    seed_active: np.ndarray = None
    seed_direction: np.ndarray = None
    traffic_bytes: int = 0
    steps_taken: int = 0

    def __post_init__(self):
        n = self.n_points
        for name in ("x_alpha_s", "x_alpha_m", "x_beta", "temperature_old", "temperature_new"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(f"field {name} must have shape ({n},)")
            setattr(self, name, arr)
        if self.seed_tracked is None:
            self.seed_tracked = np.zeros(n)
        if self.seed_active is None:
            self.seed_active = np.zeros(n, dtype=np.uint8)
        if self.seed_direction is None:
            self.seed_direction = np.zeros(n, dtype=np.uint8)

    @property
    def n_points(self):
        return len(np.asarray(self.x_alpha_s))

    @classmethod
    def allocate(cls, n, temperature=293.0):
        t = np.full(n, float(temperature))
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), t.copy(), t.copy())

    def states(self):
        """(n, 3) array of phase fractions."""
        return np.stack([self.x_alpha_s, self.x_alpha_m, self.x_beta], axis=1)

    def copy(self):
        return GlobalFields(
            self.x_alpha_s.copy(), self.x_alpha_m.copy(), self.x_beta.copy(),
            self.temperature_old.copy(), self.temperature_new.copy(),
            self.seed_tracked.copy(), self.seed_active.copy(), self.seed_direction.copy(),
            self.traffic_bytes, self.steps_taken)


# --------------------------------------------------------------------------
# lane batch view (the python-visible mirror of the kernel workspace)
# --------------------------------------------------------------------------

@dataclass
class LaneBatch:
    """Fixed-width working copy of one slice of the global vectors.

    `mask` marks real lanes; a tail batch pads the missing lanes with lane 0
    so every expression stays well defined, and stores write only real lanes.
    """

    x_alpha_s: np.ndarray
    x_alpha_m: np.ndarray
    x_beta: np.ndarray
    temperature_old: np.ndarray
    temperature_new: np.ndarray
    mask: np.ndarray
    base: int

    @property
    def n_lanes(self):
        return len(self.mask)


def load_batch(fields, base, n_lanes):
    """Load lanes [base, base+n_lanes) with masked padding past the end."""
    n = fields.n_points
    idx = base + np.arange(n_lanes)
    mask = idx < n
    idx = np.where(mask, idx, base)
    return LaneBatch(
        fields.x_alpha_s[idx].copy(), fields.x_alpha_m[idx].copy(),
        fields.x_beta[idx].copy(), fields.temperature_old[idx].copy(),
        fields.temperature_new[idx].copy(), mask, base)


def store_batch(fields, batch):
    """Store real lanes back; temperature_old takes temperature_new's value."""
    w = int(batch.mask.sum())
    sl = slice(batch.base, batch.base + w)
    fields.x_alpha_s[sl] = batch.x_alpha_s[:w]
    fields.x_alpha_m[sl] = batch.x_alpha_m[:w]
    fields.x_beta[sl] = batch.x_beta[:w]
    fields.temperature_old[sl] = batch.temperature_new[:w]


def blend(mask, a, b):
    """Lane-wise select: a where mask, b elsewhere."""
    return np.where(mask, a, b)


def branch_dispatch(mask):
    """Classify a condition mask into the three branch scenarios."""
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        return "all"
    if not mask.any():
        return "none"
    return "some"


# --------------------------------------------------------------------------
# compiled lane helpers
# --------------------------------------------------------------------------

@njit(inline="always", **_JIT)
def _lane_tfuncs(T, g, xsol, xaeq, kas, kp):
    """Temperature-dependent model functions for one lane array."""
    for j in range(T.shape[0]):
        gg = (T[j] - kp.t_sol) / (kp.t_liq - kp.t_sol)
        gg = 0.0 if gg < 0.0 else (1.0 if gg > 1.0 else gg)
        g[j] = gg
        xsol[j] = 1.0 - gg
        ramp = 1.0 - fast_exp_scalar(-kp.k_alpha_eq * (kp.t_as_start - T[j]))
        ae = _XA_MAX if T[j] < kp.t_as_end else (0.0 if T[j] > kp.t_as_start else ramp)
        xaeq[j] = ae
        kas[j] = kp.k1 / (1.0 + fast_exp_scalar(-kp.k3 * (T[j] - kp.k2)))


@njit(inline="always", **_JIT)
def _lane_tfuncs_rates(T, xaeq, kas, kp):
    """Only the rate-side temperature functions (for the step-start pass)."""
    for j in range(T.shape[0]):
        ramp = 1.0 - fast_exp_scalar(-kp.k_alpha_eq * (kp.t_as_start - T[j]))
        ae = _XA_MAX if T[j] < kp.t_as_end else (0.0 if T[j] > kp.t_as_start else ramp)
        xaeq[j] = ae
        kas[j] = kp.k1 / (1.0 + fast_exp_scalar(-kp.k3 * (T[j] - kp.k2)))


@njit(inline="always", **_JIT)
def _lane_xmeq_base(T, out, kp):
    """Martensite Koistinen-Marburger term clamped to the 0.9 plateau."""
    for j in range(T.shape[0]):
        v = 1.0 - fast_exp_scalar(-kp.k_alpha_m_eq * (kp.t_am_start - T[j]))
        out[j] = v if v < _XA_MAX else _XA_MAX


@njit(inline="always", **_JIT)
def _lane_rates(xs, xm, xaeq, kas, ds, dm, pxs, pa, pb, pc, pd, kp):
    """Diffusional rates with three-scenario branch dispatch.

    Branches nobody in the batch needs are skipped outright; otherwise they
    are evaluated on all lanes and gated per lane by the condition mask.
    """
    n = xs.shape[0]
    n_grow = 0
    n_am = 0
    n_dis = 0
    for j in range(n):
        xa = xs[j] + xm[j]
        n_grow += 1 if ((xa < xaeq[j]) & (xs[j] > 0.0)) else 0
        n_am += 1 if ((xm[j] > 0.0) & (xs[j] > 0.0)) else 0
        n_dis += 1 if ((xa > xaeq[j]) & (xa < _XA_MAX)) else 0
    if n_grow > 0 or n_am > 0:
        for j in range(n):
            b = xs[j] if xs[j] > _POW_FLOOR else _POW_FLOOR
            pxs[j] = fast_pow_scalar(b, kp.exp_as_lo)
    if n_grow > 0:
        for j in range(n):
            d = xaeq[j] - (xs[j] + xm[j])
            b = d if d > _POW_FLOOR else _POW_FLOOR
            pa[j] = fast_pow_scalar(b, kp.exp_as_hi)
    if n_am > 0:
        for j in range(n):
            b = xm[j] if xm[j] > _POW_FLOOR else _POW_FLOOR
            pb[j] = fast_pow_scalar(b, kp.exp_as_hi)
    if n_dis > 0:
        for j in range(n):
            xa = xs[j] + xm[j]
            b = _XA_MAX - xa
            b = b if b > _POW_FLOOR else _POW_FLOOR
            pc[j] = fast_pow_scalar(b, kp.exp_b_lo)
            d = xa - xaeq[j]
            b = d if d > _POW_FLOOR else _POW_FLOOR
            pd[j] = fast_pow_scalar(b, kp.exp_b_hi)
    for j in range(n):
        xa = xs[j] + xm[j]
        r1 = kas[j] * pxs[j] * pa[j] if ((xa < xaeq[j]) & (xs[j] > 0.0)) else 0.0
        r2 = kas[j] * pxs[j] * pb[j] if ((xm[j] > 0.0) & (xs[j] > 0.0)) else 0.0
        r3 = kp.f * kas[j] * pc[j] * pd[j] if ((xa > xaeq[j]) & (xa < _XA_MAX)) else 0.0
        ds[j] = r1 + r2 - r3
        dm[j] = -r2


@njit(inline="always", **_JIT)
def _lane_corrections(xs_in, xm_in, T, xaeq, xsol, xmeqb, any_form, any_reg,
                      oxs, oxm, oxb, kp):
    """Correction function g: clamp, regularize, dissolve, form, cap, beta."""
    n = xs_in.shape[0]
    for j in range(n):
        xs = xs_in[j] if xs_in[j] > 0.0 else 0.0
        xm = xm_in[j] if xm_in[j] > 0.0 else 0.0
        if any_reg:
            ramp = _XA_MAX * (kp.t_as_start + kp.t_as_reg - T[j]) / kp.t_as_reg
            ramp = ramp if ramp > 0.0 else 0.0
            cap = ramp if ramp < xs else xs
            xs = cap if T[j] > kp.t_as_start else xs
        diss = xaeq[j] - xs
        diss = diss if diss > 0.0 else 0.0
        xm = diss if xs + xm > xaeq[j] else xm
        if any_form:
            xmeq = xmeqb[j] * (_XA_MAX - xs) * (1.0 / _XA_MAX)
            grown = xmeq if xmeq > xm else xm
            xm = grown if T[j] < kp.t_am_start else xm
        xa = xs + xm
        sc = _XA_MAX / xa if xa > _XA_MAX else 1.0
        xs = xs * sc
        xm = xm * sc
        xb = xsol[j] - xs - xm
        oxs[j] = xs
        oxm[j] = xm
        oxb[j] = xb if xb > 0.0 else 0.0


@njit(inline="always", **_JIT)
def _seed_advance(direction, tracked, xaeq, kas, xsol, dt, kp, threshold):
    """One analytic initiation step: returns (tracked', active', xs, xm, xb).

    Advances the shifted fraction by the closed-form logistic solution; the
    seed hands off to the rate equations once tracked*dt clears the threshold.
    """
    if direction == SEED_BETA_TO_ALPHA_S:
        delta = xaeq
        k = kas
        c = kp.c_alpha_s
    else:
        delta = _XA_MAX - xaeq  # X_beta_eq - 0.1
        k = kp.f * kas
        c = kp.c_beta
    xi = tracked / delta
    xi = 0.0 if xi < 0.0 else xi
    xi = 1.0 - 1e-12 if xi > 1.0 - 1e-12 else xi
    term = fast_pow_scalar(xi / (1.0 - xi), 1.0 / c) if xi > 0.0 else 0.0
    denom = delta * k * dt + c * term
    new_tracked = delta / (1.0 + fast_pow_scalar(c / denom, c))
    active = not (new_tracked * dt > threshold)
    if direction == SEED_BETA_TO_ALPHA_S:
        xs = new_tracked
        xm = 0.0
        xb = xsol - new_tracked
    else:
        xs = _XA_MAX - new_tracked
        xm = 0.0
        xb = 0.1 + new_tracked
    return new_tracked, active, xs, xm, xb


@njit(**_JIT)
def _cn_substep(lxs, lxm, pt1, g1, xsol1, xaeq1, kas1, xmeqb1,
                dsn, dmn, dsi, dmi, dsx, dmx, cxs, cxm, cxb,
                pxs, pa, pb, pc, pd, exs, exm, exb,
                sxs, sxm, sxb, conv, itc, dt, cfg, kp):
    """One Crank-Nicolson substep; rates at the step start must be in dsn/dmn.

    Expressions are evaluated on all lanes every iteration, but a lane's
    result and rate slots freeze once its own WRMS residual clears the
    threshold, so each lane sees exactly the iteration sequence the scalar
    path would.  Per-lane iteration counts accumulate into itc.

    Returns (all_converged, iterations); the corrected converged state lands
    in exs/exm/exb.
    """
    n = lxs.shape[0]
    any_form = 0
    any_reg = 0
    for j in range(n):
        any_form += 1 if pt1[j] < kp.t_am_start else 0
        any_reg += 1 if pt1[j] > kp.t_as_start else 0
        conv[j] = 0
    # m_0 = corrected previous state at T1
    _lane_corrections(lxs, lxm, pt1, xaeq1, xsol1, xmeqb1,
                      any_form > 0, any_reg > 0, cxs, cxm, cxb, kp)
    _lane_rates(cxs, cxm, xaeq1, kas1, dsi, dmi, pxs, pa, pb, pc, pd, kp)
    half = 0.5 * dt
    iters = 0
    while True:
        for j in range(n):
            exs[j] = lxs[j] + half * (dsi[j] + dsn[j])
            exm[j] = lxm[j] + half * (dmi[j] + dmn[j])
        _lane_corrections(exs, exm, pt1, xaeq1, xsol1, xmeqb1,
                          any_form > 0, any_reg > 0, cxs, cxm, cxb, kp)
        _lane_rates(cxs, cxm, xaeq1, kas1, dsx, dmx, pxs, pa, pb, pc, pd, kp)
        iters += 1
        n_open = 0
        for j in range(n):
            if conv[j] == 0:
                rs = half * (dsx[j] - dsi[j])
                rm = half * (dmx[j] - dmi[j])
                ws = 1.0 / (cfg.eps_abs + abs(cxs[j]) * cfg.eps_rel)
                wm = 1.0 / (cfg.eps_abs + abs(cxm[j]) * cfg.eps_rel)
                e = 0.5 * ((rs * ws) * (rs * ws) + (rm * wm) * (rm * wm))
                sxs[j] = cxs[j]
                sxm[j] = cxm[j]
                sxb[j] = cxb[j]
                dsi[j] = dsx[j]
                dmi[j] = dmx[j]
                itc[j] += 1.0
                if e < 1.0:
                    conv[j] = 1
                else:
                    n_open += 1
        if n_open == 0 or iters >= cfg.max_fixed_point_iters:
            for j in range(n):
                exs[j] = sxs[j]
                exm[j] = sxm[j]
                exb[j] = sxb[j]
            return n_open == 0, iters


@njit(**_JIT)
def _seed_pass(lxs, lxm, lxb, ltr, lac, ldr, pt1, g1, xsol1, xaeq1, kas1,
               exs, exm, exb, dt, cfg, kp, do_advance):
    """Seeding bookkeeping, and (when do_advance) the analytic lane updates.

    Returns the number of lanes seeding this substep.  Rare path: runs only
    when the cheap screen found an active seed or a stuck candidate.
    """
    n = lxs.shape[0]
    n_seed = 0
    tol = cfg.stuck_tol
    for j in range(n):
        t1 = pt1[j]
        xaeq = xaeq1[j]
        melting = g1[j] > 0.0
        if lac[j] != 0:
            if ldr[j] == SEED_BETA_TO_ALPHA_S:
                if xaeq <= 0.0 or t1 < kp.t_am_start or melting:
                    lac[j] = 0
            else:
                if xaeq >= _XA_MAX - 1e-12 or melting:
                    lac[j] = 0
        else:
            if abs(lxm[j]) <= tol and not melting:
                if (abs(lxs[j]) <= tol and abs(lxb[j] - xsol1[j]) <= tol
                        and xaeq > 0.0 and t1 >= kp.t_am_start):
                    lac[j] = 1
                    ldr[j] = SEED_BETA_TO_ALPHA_S
                    ltr[j] = lxs[j] if lxs[j] > 0.0 else 0.0
                elif (abs(lxs[j] - _XA_MAX) <= tol and abs(lxb[j] - 0.1) <= tol
                        and xaeq < _XA_MAX - 1e-12):
                    lac[j] = 1
                    ldr[j] = SEED_ALPHA_S_TO_BETA
                    ltr[j] = lxb[j] - 0.1 if lxb[j] > 0.1 else 0.0
        if lac[j] != 0:
            n_seed += 1
            if do_advance:
                tr, act, sxs, sxm, sxb = _seed_advance(
                    ldr[j], ltr[j], xaeq1[j], kas1[j], xsol1[j],
                    dt, kp, cfg.initiation_threshold)
                ltr[j] = tr
                lac[j] = 1 if act else 0
                exs[j] = sxs
                exm[j] = sxm
                exb[j] = sxb
    return n_seed


@njit(inline="always", **_JIT)
def _range_body(xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                start, stop, lanes, nsub, dt_sub, cfg, kp,
                record_iters, iters_out, W, WI, explicit):
    """Integrate one macro step for points [start, stop) in lane batches.

    `explicit` is a literal at every call site, so the unused scheme's code
    folds away entirely (the implicit machinery otherwise costs the explicit
    hot loop ~45% through register pressure alone).

    Returns 0 on success or (base+1) of the first batch whose implicit
    iteration failed after all halving retries.
    """
    lxs = W[_LXS]
    lxm = W[_LXM]
    lxb = W[_LXB]
    lt0 = W[_LT0]
    lt1 = W[_LT1]
    st0 = W[_ST0]
    st1 = W[_ST1]
    pt0 = W[_PT0]
    pt1 = W[_PT1]
    g1 = W[_G1]
    xsol1 = W[_XSOL1]
    xaeq1 = W[_XAEQ1]
    kas1 = W[_KAS1]
    xmeqb1 = W[_XMEQB1]
    xaeq0 = W[_XAEQ0]
    kas0 = W[_KAS0]
    ltr = W[_LTR]
    dsn = W[_DSN]
    dmn = W[_DMN]
    dsi = W[_DSI]
    dmi = W[_DMI]
    dsx = W[_DSX]
    dmx = W[_DMX]
    cxs = W[_CXS]
    cxm = W[_CXM]
    cxb = W[_CXB]
    pxs = W[_PXS]
    pa = W[_PA]
    pb = W[_PB]
    pc = W[_PC]
    pd = W[_PD]
    bxs = W[_BXS]
    bxm = W[_BXM]
    bxb = W[_BXB]
    btr = W[_BTR]
    exs = W[_EXS]
    exm = W[_EXM]
    exb = W[_EXB]
    sxs = W[_SXS]
    sxm = W[_SXM]
    sxb = W[_SXB]
    itc = W[_ITC]
    lac = WI[0]
    ldr = WI[1]
    bac = WI[2]
    bdr = WI[3]
    conv = WI[4]

    inv_nsub = 1.0 / nsub
    stuck_tol = cfg.stuck_tol

    for base in range(start, stop, lanes):
        w = stop - base
        w = lanes if w > lanes else w
        n_seed_in = 0
        for j in range(lanes):
            i = base + j if j < w else base
            lxs[j] = xs_g[i]
            lxm[j] = xm_g[i]
            lxb[j] = xb_g[i]
            lt0[j] = t0_g[i]
            lt1[j] = t1_g[i]
            ac = ac_g[i]
            n_seed_in += 1 if ac != 0 else 0
            lac[j] = ac
            ldr[j] = dr_g[i] if ac != 0 else 0
            ltr[j] = tr_g[i] if ac != 0 else 0.0
            if not explicit:
                itc[j] = 0.0
        seed_out = n_seed_in > 0

        total_iters = 0
        failed = False
        for k in range(nsub):
            # substep temperatures: exact endpoints, linear interior
            last_sub = k == nsub - 1
            if nsub == 1:
                s0v = lt0
                s1v = lt1
            else:
                f0 = k * inv_nsub
                f1 = (k + 1) * inv_nsub
                for j in range(lanes):
                    d = lt1[j] - lt0[j]
                    st0[j] = lt0[j] + d * f0
                    st1[j] = lt1[j] if last_sub else lt0[j] + d * f1
                s0v = st0
                s1v = st1
            if not explicit:
                # save the substep entry state for halving retries
                for j in range(lanes):
                    bxs[j] = lxs[j]
                    bxm[j] = lxm[j]
                    bxb[j] = lxb[j]
                    btr[j] = ltr[j]
                    bac[j] = lac[j]
                    bdr[j] = ldr[j]
            halv = 0
            while True:
                pieces = 1 << halv
                inv_p = 1.0 / pieces
                ok = True
                it_acc = 0
                for p in range(pieces):
                    if pieces == 1:
                        p0v = s0v
                        p1v = s1v
                    else:
                        pf0 = p * inv_p
                        pf1 = (p + 1) * inv_p
                        last_p = p == pieces - 1
                        for j in range(lanes):
                            dts = s1v[j] - s0v[j]
                            pt0[j] = s0v[j] + dts * pf0
                            pt1[j] = s1v[j] if last_p else s0v[j] + dts * pf1
                        p0v = pt0
                        p1v = pt1
                    if k == 0 and p == 0:
                        _lane_tfuncs_rates(p0v, xaeq0, kas0, kp)
                    elif halv == 0 or p > 0:
                        # piece start equals the previous piece's end bitwise
                        for j in range(lanes):
                            xaeq0[j] = xaeq1[j]
                            kas0[j] = kas1[j]
                    else:
                        # halving retry restarts the substep from its start
                        _lane_tfuncs_rates(p0v, xaeq0, kas0, kp)
                    _lane_tfuncs(p1v, g1, xsol1, xaeq1, kas1, kp)
                    n_form = 0
                    n_reg = 0
                    n_watch = 0
                    for j in range(lanes):
                        n_form += 1 if p1v[j] < kp.t_am_start else 0
                        n_reg += 1 if p1v[j] > kp.t_as_start else 0
                        watch = (lac[j] != 0) | (
                            (abs(lxm[j]) <= stuck_tol)
                            & ((abs(lxs[j]) <= stuck_tol)
                               | (abs(lxs[j] - _XA_MAX) <= stuck_tol)))
                        n_watch += 1 if watch else 0
                    if n_form > 0:
                        _lane_xmeq_base(p1v, xmeqb1, kp)
                    n_seed = 0
                    if n_watch > 0:
                        n_seed = _seed_pass(lxs, lxm, lxb, ltr, lac, ldr, p1v,
                                            g1, xsol1, xaeq1, kas1,
                                            exs, exm, exb, 0.0, cfg, kp, False)
                    dt_p = dt_sub * inv_p
                    its = 0
                    if n_seed < lanes:
                        if explicit:
                            _lane_rates(lxs, lxm, xaeq0, kas0, dsn, dmn,
                                        pxs, pa, pb, pc, pd, kp)
                            for j in range(lanes):
                                exs[j] = lxs[j] + dt_p * dsn[j]
                                exm[j] = lxm[j] + dt_p * dmn[j]
                            _lane_corrections(exs, exm, p1v, xaeq1, xsol1, xmeqb1,
                                              n_form > 0, n_reg > 0,
                                              exs, exm, exb, kp)
                        else:
                            _lane_rates(lxs, lxm, xaeq0, kas0, dsn, dmn,
                                        pxs, pa, pb, pc, pd, kp)
                            ok, its = _cn_substep(lxs, lxm, p1v, g1, xsol1, xaeq1,
                                                  kas1, xmeqb1, dsn, dmn, dsi, dmi,
                                                  dsx, dmx, cxs, cxm, cxb,
                                                  pxs, pa, pb, pc, pd,
                                                  exs, exm, exb, sxs, sxm, sxb,
                                                  conv, itc, dt_p, cfg, kp)
                    if n_seed > 0:
                        # analytic advance overwrites the seeding lanes
                        _seed_pass(lxs, lxm, lxb, ltr, lac, ldr, p1v,
                                   g1, xsol1, xaeq1, kas1,
                                   exs, exm, exb, dt_p, cfg, kp, True)
                        seed_out = True
                    for j in range(lanes):
                        lxs[j] = exs[j]
                        lxm[j] = exm[j]
                        lxb[j] = exb[j]
                    it_acc += its
                    if not ok:
                        break
                if ok:
                    total_iters += it_acc
                    break
                halv += 1
                if halv > cfg.max_halvings:
                    total_iters += it_acc
                    failed = True
                    break
                for j in range(lanes):
                    lxs[j] = bxs[j]
                    lxm[j] = bxm[j]
                    lxb[j] = bxb[j]
                    ltr[j] = btr[j]
                    lac[j] = bac[j]
                    ldr[j] = bdr[j]
            if failed:
                break

        for j in range(w):
            i = base + j
            xs_g[i] = lxs[j]
            xm_g[i] = lxm[j]
            xb_g[i] = lxb[j]
            t0_g[i] = lt1[j]
        if record_iters and not explicit:
            for j in range(w):
                iters_out[base + j] = np.int64(itc[j])
        if seed_out:
            for j in range(w):
                i = base + j
                tr_g[i] = ltr[j]
                ac_g[i] = lac[j]
                dr_g[i] = ldr[j]
        if failed:
            return base + 1
    return 0


@njit(**_JIT)
def run_range_explicit(xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                       start, stop, lanes, nsub, dt_sub, cfg, kp,
                       record_iters, iters_out, W, WI):
    return _range_body(xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                       start, stop, lanes, nsub, dt_sub, cfg, kp,
                       record_iters, iters_out, W, WI, True)


@njit(**_JIT)
def run_range_implicit(xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                       start, stop, lanes, nsub, dt_sub, cfg, kp,
                       record_iters, iters_out, W, WI):
    return _range_body(xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                       start, stop, lanes, nsub, dt_sub, cfg, kp,
                       record_iters, iters_out, W, WI, False)


@njit(**_JIT)
def run_range(xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
              start, stop, lanes, nsub, dt_sub, cfg, kp,
              record_iters, iters_out, W, WI):
    """Scheme-dispatching entry used by the scalar and history drivers."""
    if cfg.scheme == SCHEME_EXPLICIT:
        return run_range_explicit(xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                                  start, stop, lanes, nsub, dt_sub, cfg, kp,
                                  record_iters, iters_out, W, WI)
    return run_range_implicit(xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                              start, stop, lanes, nsub, dt_sub, cfg, kp,
                              record_iters, iters_out, W, WI)


@njit(parallel=True, **_JIT)
def _run_parallel(xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                  bounds, lanes, nsub, dt_sub, cfg, kp,
                  record_iters, iters_out, results):
    explicit = cfg.scheme == SCHEME_EXPLICIT
    for c in prange(bounds.shape[0] - 1):
        W = np.zeros((_NW, lanes))
        WI = np.zeros((_NWI, lanes), dtype=np.uint8)
        if explicit:
            results[c] = run_range_explicit(
                xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                bounds[c], bounds[c + 1], lanes, nsub, dt_sub,
                cfg, kp, record_iters, iters_out, W, WI)
        else:
            results[c] = run_range_implicit(
                xs_g, xm_g, xb_g, t0_g, t1_g, tr_g, ac_g, dr_g,
                bounds[c], bounds[c + 1], lanes, nsub, dt_sub,
                cfg, kp, record_iters, iters_out, W, WI)


@njit(**_JIT)
def _num_substeps(dt, dt_sub_max):
    """Subcycle count: 1 when dt fits, else the minimal equal subdivision."""
    if dt <= dt_sub_max * (1.0 + 1e-9):
        return 1
    return int(np.ceil(dt / dt_sub_max - 1e-12))


def _workspace(lanes):
    return np.zeros((_NW, lanes)), np.zeros((_NWI, lanes), dtype=np.uint8)


def step_all(fields, dt, params, config, n_lanes=8, threads=1, record_iters=False):
    """Advance every point of `fields` by the macro step dt.

    Equivalent to the scalar integrator applied pointwise (bit-identical for
    the explicit scheme).  temperature_old is overwritten by temperature_new
    in the same pass.  Returns the per-point implicit iteration counts when
    record_iters is set, else None.

    Raises BatchConvergenceError naming the failing points if the implicit
    iteration diverges after all halving retries.
    """
    if n_lanes not in SUPPORTED_LANES:
        raise ValueError(f"n_lanes must be one of {SUPPORTED_LANES}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = fields.n_points
    cfg = config.kernel_tuple()
    kp = params.kernel_tuple()
    nsub = _num_substeps(float(dt), cfg.dt_sub_max)
    dt_sub = float(dt) / nsub
    iters_out = np.zeros(n, dtype=np.int64) if record_iters else np.zeros(1, dtype=np.int64)

    if threads > 1 and n > 4 * n_lanes:
        nchunks = min(threads * 8, max(1, n // n_lanes))
        raw = np.linspace(0, n, nchunks + 1).astype(np.int64)
        bounds = np.unique((raw // n_lanes) * n_lanes)
        if bounds[-1] != n:
            bounds = np.append(bounds, n)
        results = np.zeros(len(bounds) - 1, dtype=np.int64)
        _run_parallel(fields.x_alpha_s, fields.x_alpha_m, fields.x_beta,
                      fields.temperature_old, fields.temperature_new,
                      fields.seed_tracked, fields.seed_active, fields.seed_direction,
                      bounds, n_lanes, nsub, dt_sub, cfg, kp,
                      record_iters, iters_out, results)
        fails = results[results != 0]
    else:
        W, WI = _workspace(n_lanes)
        kern = run_range_explicit if cfg.scheme == SCHEME_EXPLICIT else run_range_implicit
        rc = kern(fields.x_alpha_s, fields.x_alpha_m, fields.x_beta,
                  fields.temperature_old, fields.temperature_new,
                  fields.seed_tracked, fields.seed_active, fields.seed_direction,
                  0, n, n_lanes, nsub, dt_sub, cfg, kp,
                  record_iters, iters_out, W, WI)
        fails = np.array([rc]) if rc != 0 else np.array([], dtype=np.int64)

    fields.traffic_bytes += BYTES_PER_POINT * n
    fields.steps_taken += 1
    if len(fails):
        first = [int(f - 1) for f in fails]
        idx = [i for b in first for i in range(b, min(b + n_lanes, n))]
        raise BatchConvergenceError(idx)
    return iters_out if record_iters else None
