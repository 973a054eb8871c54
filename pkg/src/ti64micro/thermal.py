"""Scan-resolved thermal driver on a uniform voxel grid.

Explicit finite differences with harmonic-mean face conductivities solve the
heat equation over an axis-aligned part growing layer by layer on a base
plate.  Material state per voxel is powder / melt / solid, interpolating the
conductivity; the consolidated fraction records the maximum liquid fraction
ever reached (irreversible).  A cylindrical volumetric heat source follows
the scan path; exposed top faces lose heat by radiation and, above the
boiling point, evaporation.  The kinetics fields share the temperature
buffers, so the one-way coupling is a per-step handoff of (T_n, T_n+1).

Voxel height equals the powder layer thickness, so activating a layer adds
one voxel sheet of powder at the preheat temperature.
"""

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from numba import njit

from .batch import GlobalFields, step_all
from .fastmath import fast_exp, fast_exp_scalar
from .kinetics import DEFAULT_PARAMS, PhaseState, apply_corrections, solid_fraction

__all__ = [
    "ThermalParams",
    "ThermalField",
    "HeatSource",
    "BuildGeometry",
    "BuildSchedule",
    "conductivity",
    "update_consolidation",
    "source_term",
    "surface_losses",
    "stable_dt",
    "step_thermal",
    "activate_layer",
    "run_build",
]

STATE_INACTIVE = 0
STATE_POWDER = 1
STATE_BUILT = 2  # consolidated from the start (base plate)

SIGMA_S = 5.670374419e-8  # W/(m^2 K^4)


class KernelThermalParams(NamedTuple):
    k_ms: float
    k_p: float
    rho_c: float
    t_sol: float
    t_liq: float
    t_inf: float
    emissivity: float
    sigma_s: float
    t_v: float
    c_p: float
    c_t: float
    c_m: float
    h_v: float
    t_h0: float
    t_max_clamp: float
    c_heat: float


@dataclass(frozen=True)
class ThermalParams:
    """Thermal model parameters; defaults are the published Ti-6Al-4V set."""

    k_ms: float = 28.6        # W/(m K), melt and solid
    k_p: float = 0.286        # W/(m K), powder
    rho: float = 4090.0       # kg/m^3
    c: float = 1130.0         # J/(kg K)
    t_sol: float = 1878.0     # K
    t_liq: float = 1928.0     # K
    t_inf: float = 293.0      # K
    emissivity: float = 0.7
    sigma_s: float = SIGMA_S
    t_v: float = 3130.0       # K, boiling
    c_p: float = 54e3         # Pa, recoil pressure factor
    c_t: float = 5.07e4       # K
    c_m: float = 9.15e-4      # K s^2/m^2
    molar_mass: float = 0.0478  # kg/mol; stored, not used by the printed loss law
    h_v: float = 8.84e6       # J/kg, latent heat of evaporation
    t_h0: float = 538.0       # K, enthalpy reference
    t_max_clamp: float = 3130.0 + 1000.0  # K, [T] ceiling in the evaporation law

    def with_overrides(self, **kwargs):
        return replace(self, **kwargs)

    def kernel_tuple(self):
        return KernelThermalParams(
            k_ms=self.k_ms, k_p=self.k_p, rho_c=self.rho * self.c,
            t_sol=self.t_sol, t_liq=self.t_liq, t_inf=self.t_inf,
            emissivity=self.emissivity, sigma_s=self.sigma_s,
            t_v=self.t_v, c_p=self.c_p, c_t=self.c_t, c_m=self.c_m,
            h_v=self.h_v, t_h0=self.t_h0, t_max_clamp=self.t_max_clamp,
            c_heat=self.c)


DEFAULT_THERMAL = ThermalParams()


@dataclass(frozen=True)
class HeatSource:
    """Cylindrical volumetric beam: Gaussian in-plane, uniform over one layer depth."""

    w_eff: float = 180.0      # W
    radius: float = 0.06e-3   # m
    h_powder: float = 0.05e-3  # m

    def __post_init__(self):
        if self.w_eff <= 0 or self.radius <= 0 or self.h_powder <= 0:
            raise ValueError("heat source parameters must be positive")

    @property
    def peak(self):
        return 2.0 * self.w_eff / (math.pi * self.radius**2 * self.h_powder)


def conductivity(t, r_c, params=DEFAULT_THERMAL):
    """State-interpolated conductivity r_p k_p + r_m k_m + r_s k_s (k_m = k_s)."""
    t = np.asarray(t, dtype=np.float64)
    r_c = np.asarray(r_c, dtype=np.float64)
    g = np.clip((t - params.t_sol) / (params.t_liq - params.t_sol), 0.0, 1.0)
    r_p = 1.0 - r_c
    r_m = g
    r_s = r_c - g
    out = r_p * params.k_p + r_m * params.k_ms + r_s * params.k_ms
    return float(out) if out.ndim == 0 else out


def update_consolidation(r_c, t, powder_origin, params=DEFAULT_THERMAL):
    """Running max of the liquid fraction for powder-origin voxels."""
    g = np.clip((np.asarray(t) - params.t_sol) / (params.t_liq - params.t_sol), 0.0, 1.0)
    return np.where(powder_origin, np.maximum(r_c, g), r_c)


def source_term(x, y, z_below_surface, beam_x, beam_y, source=HeatSource(), params=None):
    """Volumetric heat input at a point; zero below the deposition depth."""
    r2 = (np.asarray(x) - beam_x) ** 2 + (np.asarray(y) - beam_y) ** 2
    inside = np.asarray(z_below_surface) < source.h_powder
    q = source.peak * fast_exp(-2.0 * r2 / source.radius**2)
    out = np.where(inside, q, 0.0)
    return float(out) if out.ndim == 0 else out


def surface_losses(t, params=DEFAULT_THERMAL):
    """Radiative plus evaporative surface flux (W/m^2) for exposed top faces.

    The evaporation law is evaluated at the clamped temperature
    [T] = min(T, t_max_clamp) and contributes only for [T] above boiling.
    """
    t = np.asarray(t, dtype=np.float64)
    q_rad = params.emissivity * params.sigma_s * (t**4 - params.t_inf**4)
    tc = np.minimum(t, params.t_max_clamp)
    q_evap = (0.82 * params.c_p
              * fast_exp(-params.c_t * (1.0 / tc - 1.0 / params.t_v))
              * np.sqrt(params.c_m / tc)
              * (params.h_v + params.c * (tc - params.t_h0)))
    out = q_rad + np.where(tc > params.t_v, q_evap, 0.0)
    return float(out) if out.ndim == 0 else out


def stable_dt(h, params=DEFAULT_THERMAL):
    """Explicit diffusion stability bound h^2 rho c / (6 k_max)."""
    return h * h * params.rho * params.c / (6.0 * params.k_ms)


# --------------------------------------------------------------------------
# voxel field
# --------------------------------------------------------------------------

@dataclass
class ThermalField:
    """Voxel grid state; temperature buffers are shared with GlobalFields."""

    temperature_old: np.ndarray   # (nz, ny, nx) view
    temperature_new: np.ndarray
    r_c: np.ndarray
    state: np.ndarray             # uint8 voxel state
    h: float
    z_top: int                    # active layers occupy z < z_top

    @property
    def shape(self):
        return self.state.shape

    def active_mask(self):
        return self.state != STATE_INACTIVE

    def enthalpy(self, params=DEFAULT_THERMAL):
        """Total rho c T h^3 over active voxels (current = old buffer)."""
        m = self.active_mask()
        return float(params.rho * params.c * self.h**3 * self.temperature_old[m].sum())

    def commit_temperatures(self):
        """Adopt temperature_new as current (what the kinetics pass does)."""
        self.temperature_old[...] = self.temperature_new


@njit(error_model="numpy", cache=True)
def _stencil_step(src, dst, rc, state, z_top, dt, h, tp,
                  beam_x, beam_y, source_on, src_peak, src_r2inv,
                  losses_on, bc_bottom_on, bc_bottom):
    """One explicit stencil step src -> dst; updates consolidation in place."""
    nz, ny, nx = src.shape
    inv_rch2 = dt / (tp.rho_c * h * h)
    inv_rch = dt / (tp.rho_c * h)
    inv_rc = dt / tp.rho_c
    dk = tp.k_ms - tp.k_p
    t4inf = tp.t_inf ** 4
    for z in range(z_top):
        for y in range(ny):
            for x in range(nx):
                if state[z, y, x] == STATE_INACTIVE:
                    continue
                t0 = src[z, y, x]
                g0 = (t0 - tp.t_sol) / (tp.t_liq - tp.t_sol)
                g0 = 0.0 if g0 < 0.0 else (1.0 if g0 > 1.0 else g0)
                rc0 = rc[z, y, x]
                rc0 = rc0 if rc0 > g0 else g0
                k0 = tp.k_p + rc0 * dk
                flux = 0.0
                # 7-point stencil, zero-flux at inactive/missing neighbors
                for face in range(6):
                    if face == 0:
                        zz, yy, xx = z, y, x - 1
                    elif face == 1:
                        zz, yy, xx = z, y, x + 1
                    elif face == 2:
                        zz, yy, xx = z, y - 1, x
                    elif face == 3:
                        zz, yy, xx = z, y + 1, x
                    elif face == 4:
                        zz, yy, xx = z - 1, y, x
                    else:
                        zz, yy, xx = z + 1, y, x
                    if xx < 0 or xx >= nx or yy < 0 or yy >= ny or zz < 0 or zz >= nz:
                        continue
                    if state[zz, yy, xx] == STATE_INACTIVE:
                        continue
                    t1 = src[zz, yy, xx]
                    g1 = (t1 - tp.t_sol) / (tp.t_liq - tp.t_sol)
                    g1 = 0.0 if g1 < 0.0 else (1.0 if g1 > 1.0 else g1)
                    rc1 = rc[zz, yy, xx]
                    rc1 = rc1 if rc1 > g1 else g1
                    k1 = tp.k_p + rc1 * dk
                    kf = 2.0 * k0 * k1 / (k0 + k1)
                    flux += kf * (t1 - t0)
                t_new = t0 + inv_rch2 * flux
                if source_on != 0 and z == z_top - 1:
                    xc = (x + 0.5) * h
                    yc = (y + 0.5) * h
                    r2 = (xc - beam_x) * (xc - beam_x) + (yc - beam_y) * (yc - beam_y)
                    arg = -2.0 * r2 * src_r2inv
                    if arg > -40.0:
                        t_new += inv_rc * src_peak * fast_exp_scalar(arg)
                if losses_on != 0:
                    exposed = z == nz - 1 or state[z + 1, y, x] == STATE_INACTIVE
                    if exposed:
                        q = tp.emissivity * tp.sigma_s * (t0 * t0 * t0 * t0 - t4inf)
                        tc = t0 if t0 < tp.t_max_clamp else tp.t_max_clamp
                        if tc > tp.t_v:
                            q += (0.82 * tp.c_p
                                  * fast_exp_scalar(-tp.c_t * (1.0 / tc - 1.0 / tp.t_v))
                                  * np.sqrt(tp.c_m / tc)
                                  * (tp.h_v + tp.c_heat * (tc - tp.t_h0)))
                        t_new -= inv_rch * q
                dst[z, y, x] = t_new
    if bc_bottom_on != 0:
        for y in range(ny):
            for x in range(nx):
                if state[0, y, x] != STATE_INACTIVE:
                    dst[0, y, x] = bc_bottom
    # consolidation: running max of the liquid fraction (powder voxels)
    for z in range(z_top):
        for y in range(ny):
            for x in range(nx):
                if state[z, y, x] == STATE_POWDER:
                    g1 = (dst[z, y, x] - tp.t_sol) / (tp.t_liq - tp.t_sol)
                    g1 = 0.0 if g1 < 0.0 else (1.0 if g1 > 1.0 else g1)
                    if g1 > rc[z, y, x]:
                        rc[z, y, x] = g1


@njit(error_model="numpy", cache=True)
def _thermal_substeps(told, tnew, rc, state, z_top, nsub, dt, h, tp,
                      beam_x, beam_y, source_on, src_peak, src_r2inv,
                      losses_on, bc_bottom_on, bc_bottom):
    """nsub stencil steps from told into tnew; told is left untouched.

    Intermediate substeps alternate through scratch buffers so the final
    result always lands in tnew and the macro-step start stays in told for
    the kinetics coupling.
    """
    if nsub == 1:
        _stencil_step(told, tnew, rc, state, z_top, dt, h, tp, beam_x, beam_y,
                      source_on, src_peak, src_r2inv, losses_on,
                      bc_bottom_on, bc_bottom)
        return
    buf_a = np.empty_like(told)
    buf_b = np.empty_like(told)
    cur = told
    for s in range(nsub):
        if s == nsub - 1:
            dst = tnew
        elif s % 2 == 0:
            dst = buf_a
        else:
            dst = buf_b
        _stencil_step(cur, dst, rc, state, z_top, dt, h, tp, beam_x, beam_y,
                      source_on, src_peak, src_r2inv, losses_on,
                      bc_bottom_on, bc_bottom)
        cur = dst


def step_thermal(field, dt, params=DEFAULT_THERMAL, source=None, beam=None,
                 losses=True, bottom_dirichlet=None, nsub=None):
    """Advance the thermal field by dt (internally split to the stable bound).

    temperature_old holds the pre-step temperatures and temperature_new the
    post-step ones on return (both buffers end at the new value only after
    the kinetics pass copies them; here temperature_old is left at the new
    value internally for chaining and temperature_new carries the result).

    Raises ValueError at configuration when a forced substep count violates
    the explicit stability bound.
    """
    dt_ok = stable_dt(field.h, params)
    if nsub is None:
        nsub = max(1, int(math.ceil(dt / dt_ok - 1e-12)))
    if dt / nsub > dt_ok * (1 + 1e-9):
        raise ValueError(f"dt/nsub={dt/nsub:.3e} exceeds stability bound {dt_ok:.3e} s")
    if source is not None and beam is not None and beam[3]:
        bx, by, bpow = beam[0], beam[1], beam[2]
        src_peak = 2.0 * bpow / (math.pi * source.radius**2 * source.h_powder)
        src_on = 1
        src_r2inv = 1.0 / source.radius**2
    else:
        bx = by = 0.0
        src_peak = 0.0
        src_r2inv = 1.0
        src_on = 0
    _thermal_substeps(field.temperature_old, field.temperature_new,
                      field.r_c, field.state, field.z_top, nsub, dt / nsub,
                      field.h, params.kernel_tuple(), bx, by, src_on,
                      src_peak, src_r2inv, 1 if losses else 0,
                      0 if bottom_dirichlet is None else 1,
                      0.0 if bottom_dirichlet is None else float(bottom_dirichlet))
    return field


# --------------------------------------------------------------------------
# build geometry, activation, coupled run
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BuildGeometry:
    """Axis-aligned box part centered on a box base plate; SI units."""

    plate_size: tuple = (1.2e-3, 1.2e-3, 0.2e-3)  # (Lx, Ly, Lz)
    part_size: tuple = (1.0e-3, 1.0e-3, 0.25e-3)
    voxel: float = 0.05e-3

    def __post_init__(self):
        h = self.voxel
        if h <= 0:
            raise ValueError("voxel size must be positive")
        for a, b in zip(self.part_size[:2], self.plate_size[:2]):
            if a > b + 1e-12:
                raise ValueError("part footprint must fit on the plate")

    @property
    def grid(self):
        h = self.voxel
        nx = int(round(self.plate_size[0] / h))
        ny = int(round(self.plate_size[1] / h))
        nz_plate = int(round(self.plate_size[2] / h))
        n_layers = int(round(self.part_size[2] / h))
        return nx, ny, nz_plate, n_layers

    @property
    def part_box(self):
        """Part footprint voxel index ranges ((ix0, ix1), (iy0, iy1))."""
        nx, ny, _, _ = self.grid
        h = self.voxel
        px = int(round(self.part_size[0] / h))
        py = int(round(self.part_size[1] / h))
        ix0 = (nx - px) // 2
        iy0 = (ny - py) // 2
        return (ix0, ix0 + px), (iy0, iy0 + py)

    @property
    def part_extent(self):
        """Part footprint rectangle in metres (for scan path generation)."""
        (ix0, ix1), (iy0, iy1) = self.part_box
        h = self.voxel
        return (ix0 * h, iy0 * h, ix1 * h, iy1 * h)


@dataclass(frozen=True)
class BuildSchedule:
    """Time stepping schedule of the layer build."""

    dt_active: float = 2e-5          # s, active laser phase
    interlayer_dwell: float = 1.0    # s of cool-down after each layer
    initial_dwell_steps: int = 2000  # cool-down steps at dt_active before growth
    growth_every: int = 10           # double the step every this many steps
    dt_max: float = 0.1              # s, cool-down step cap
    final_cooldown: float = 100.0    # s after the last layer, bottom at 293 K
    preheat: float = 293.0           # K, plate constraint and new-powder temperature
    room: float = 293.0              # K, final cool-down bottom constraint


def allocate_domain(geometry, schedule, kinetics_params=DEFAULT_PARAMS):
    """Build the coupled voxel domain: plate active, part inactive, shared buffers."""
    nx, ny, nz_plate, n_layers = geometry.grid
    nz = nz_plate + n_layers
    n = nz * ny * nx
    fields = GlobalFields.allocate(n, temperature=schedule.preheat)
    t_old = fields.temperature_old.reshape(nz, ny, nx)
    t_new = fields.temperature_new.reshape(nz, ny, nx)
    state = np.zeros((nz, ny, nx), dtype=np.uint8)
    state[:nz_plate] = STATE_BUILT
    r_c = np.zeros((nz, ny, nx))
    r_c[:nz_plate] = 1.0
    field = ThermalField(t_old, t_new, r_c, state, geometry.voxel, nz_plate)
    # base-plate microstructure: fresh solid equilibrated at the preheat
    init = apply_corrections(PhaseState(0.0, 0.0, solid_fraction(schedule.preheat)),
                             schedule.preheat, kinetics_params)
    fields.x_alpha_s[:] = init.x_alpha_s
    fields.x_alpha_m[:] = init.x_alpha_m
    fields.x_beta[:] = init.x_beta
    return field, fields


def activate_layer(field, fields, geometry, schedule, kinetics_params=DEFAULT_PARAMS):
    """Add the next powder layer at the preheat temperature (r_c = 0).

    Raises ValueError once the build height is complete.
    """
    nx, ny, nz_plate, n_layers = geometry.grid
    if field.z_top >= nz_plate + n_layers:
        raise ValueError("build complete: no layer left to activate")
    (ix0, ix1), (iy0, iy1) = geometry.part_box
    z = field.z_top
    field.state[z, iy0:iy1, ix0:ix1] = STATE_POWDER
    field.r_c[z, iy0:iy1, ix0:ix1] = 0.0
    field.temperature_old[z, iy0:iy1, ix0:ix1] = schedule.preheat
    field.temperature_new[z, iy0:iy1, ix0:ix1] = schedule.preheat
    nz, nyy, nxx = field.shape
    init = apply_corrections(PhaseState(0.0, 0.0, solid_fraction(schedule.preheat)),
                             schedule.preheat, kinetics_params)
    flat = np.arange(nxx * nyy).reshape(nyy, nxx)[iy0:iy1, ix0:ix1].ravel() + z * nyy * nxx
    fields.x_alpha_s[flat] = init.x_alpha_s
    fields.x_alpha_m[flat] = init.x_alpha_m
    fields.x_beta[flat] = init.x_beta
    field.z_top = z + 1
    return field


def _active_prefix(field, fields):
    """Kinetics view of the active voxel slab (contiguous z-prefix)."""
    nz, ny, nx = field.shape
    n_act = field.z_top * ny * nx
    return GlobalFields(
        fields.x_alpha_s[:n_act], fields.x_alpha_m[:n_act], fields.x_beta[:n_act],
        fields.temperature_old[:n_act], fields.temperature_new[:n_act],
        fields.seed_tracked[:n_act], fields.seed_active[:n_act],
        fields.seed_direction[:n_act])


def _cooldown_steps(duration, schedule, initial_steps):
    """Macro step sizes of one cool-down phase.

    The first `initial_steps` run at dt_active; afterwards the step doubles
    every `growth_every` steps up to dt_max.  The last step is shortened to
    land exactly on the duration.
    """
    steps = []
    t = 0.0
    dt = schedule.dt_active
    count = 0
    while t < duration - 1e-12:
        if count > initial_steps and (count - initial_steps) % schedule.growth_every == 0:
            dt = min(dt * 2.0, schedule.dt_max)
        dt_eff = min(dt, duration - t)
        steps.append(dt_eff)
        t += dt_eff
        count += 1
    return steps


def run_build(geometry, scan_path, schedule=BuildSchedule(),
              thermal_params=DEFAULT_THERMAL, kinetics_params=DEFAULT_PARAMS,
              integrator_config=None, source=None, n_lanes=8, threads=1,
              probe_points=(), snapshot_hook=None, probe_hook=None):
    """Coupled scan-resolved build: thermal step then kinetics step, per layer.

    Per layer: activate powder, trace the layer's scan segments at dt_active,
    then the interlayer cool-down with geometrically growing steps; after the
    last layer a final cool-down with the bottom held at room temperature.
    The kinetics consume exactly the (T_n, T_n+1) pair of each thermal step.

    Returns (field, fields, probes) where probes maps point index -> list of
    (t, T, x_alpha_s, x_alpha_m, x_beta) rows.  Wall-clock per phase
    (active/cool-down split, thermal vs kinetics) accumulates into the
    `timings` dict attribute of the returned probes mapping.
    """
    import time as _time

    from .integrator import IntegratorConfig
    from .scanpath import beam_position, beam_timeline

    cfg = integrator_config or IntegratorConfig(scheme="explicit")
    source = source or HeatSource(h_powder=geometry.voxel)
    field, fields = allocate_domain(geometry, schedule, kinetics_params)
    nx, ny, nz_plate, n_layers = geometry.grid

    class ProbeSet(dict):
        timings = None

    probes = ProbeSet({i: [] for i in range(len(probe_points))})
    probes.timings = {"active_s": 0.0, "cooldown_s": 0.0, "final_s": 0.0,
                      "thermal_s": 0.0, "kinetics_s": 0.0}
    probe_idx = []
    for (px, py, pz) in probe_points:
        ix = min(nx - 1, max(0, int(px / geometry.voxel)))
        iy = min(ny - 1, max(0, int(py / geometry.voxel)))
        iz = min(nz_plate + n_layers - 1, max(0, int(pz / geometry.voxel)))
        probe_idx.append((iz, iy, ix))

    t_now = 0.0
    n_thermal = 0
    n_kinetics = 0

    def couple(dt, beam, bottom, phase):
        nonlocal t_now, n_thermal, n_kinetics
        w0 = _time.perf_counter()
        step_thermal(field, dt, thermal_params, source, beam,
                     losses=True, bottom_dirichlet=bottom)
        n_thermal += 1
        w1 = _time.perf_counter()
        step_all(_active_prefix(field, fields), dt, kinetics_params, cfg,
                 n_lanes=n_lanes, threads=threads)
        n_kinetics += 1
        w2 = _time.perf_counter()
        probes.timings["thermal_s"] += w1 - w0
        probes.timings["kinetics_s"] += w2 - w1
        probes.timings[phase] += w2 - w0
        t_now += dt
        if probe_hook is None:
            for pi, (iz, iy, ix) in enumerate(probe_idx):
                if iz < field.z_top and field.state[iz, iy, ix] != STATE_INACTIVE:
                    flat = (iz * ny + iy) * nx + ix
                    probes[pi].append((t_now, field.temperature_old[iz, iy, ix],
                                       fields.x_alpha_s[flat], fields.x_alpha_m[flat],
                                       fields.x_beta[flat]))
        else:
            probe_hook(t_now, field, fields)

    for layer in range(n_layers):
        activate_layer(field, fields, geometry, schedule, kinetics_params)
        segments = scan_path.layer_segments(layer)
        if segments:
            spans = beam_timeline(segments)
            t_active = spans[-1][1]
            n_steps = max(1, int(math.ceil(t_active / schedule.dt_active - 1e-12)))
            for k in range(n_steps):
                tq = min((k + 0.5) * schedule.dt_active, t_active)
                bx, by, bpow, on = beam_position(segments, tq)
                couple(schedule.dt_active, (bx, by, bpow, on), schedule.preheat,
                       "active_s")
        for dt in _cooldown_steps(scan_path.dwell, schedule, schedule.initial_dwell_steps):
            couple(dt, None, schedule.preheat, "cooldown_s")
        if snapshot_hook is not None:
            snapshot_hook(f"layer_{layer:04d}", t_now, field, fields)

    # final cool-down: bottom constrained to room temperature
    for dt in _cooldown_steps(schedule.final_cooldown, schedule, 0):
        couple(dt, None, schedule.room, "final_s")
    if snapshot_hook is not None:
        snapshot_hook("final", t_now, field, fields)
    assert n_thermal == n_kinetics, "coupling order violated"
    return field, fields, probes
