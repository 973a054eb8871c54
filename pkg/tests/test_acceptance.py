"""Acceptance criteria, one test per criterion (pass/fail line printed each).

Criteria 5 (Crank-Nicolson half) and 9 (bandwidth-saturation clause) are
implemented exactly as stated and are expected to fail on record; the
blocking analyses live in the project notes.  Everything else must pass.
"""

import math

import numpy as np
import pytest

from ti64micro import fastmath as fm
from ti64micro.batch import GlobalFields, step_all
from ti64micro.bench import (
    count_flops,
    generate_layout,
    measure_bandwidth,
    measure_peak_flops,
    measure_throughput,
    roofline,
)
from ti64micro.integrator import IntegratorConfig, analytic_beta_growth, integrate_history
from ti64micro.kinetics import DEFAULT_PARAMS, PhaseState, liquid_fraction, x_alpha_eq
from ti64micro.scanpath import ScanPath, four_islands, serpentine
from ti64micro.thermal import (
    BuildGeometry,
    BuildSchedule,
    HeatSource,
    allocate_domain,
    run_build,
    step_thermal,
)

from conftest import random_states

MM = 1e-3
CFG_E = IntegratorConfig(scheme="explicit")
CFG_I = IntegratorConfig(scheme="crank_nicolson")


def report(criterion, ok, detail):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


# --------------------------------------------------------------------------
# 1. fast-math accuracy
# --------------------------------------------------------------------------

def test_criterion_1_fastmath_accuracy():
    x = np.linspace(-700.0, 709.0, 1_000_000)
    rel_exp = (np.abs(fm.fast_exp(x) - np.exp(x)) / np.exp(x)).max()

    xl = np.exp(np.linspace(math.log(1e-300), math.log(1e300), 1_000_000))
    exact = np.log(xl)
    err = np.abs(fm.fast_ln(xl) - exact)
    far = np.abs(exact) >= 1e-3
    rel_ln = (err[far] / np.abs(exact[far])).max()
    abs_ln_near = err[~far].max() if (~far).any() else 0.0

    rng = np.random.default_rng(0)
    a = 10.0 ** rng.uniform(-12, 0, 1_000_000)
    p = rng.uniform(0.0, 2.0, 1_000_000)
    rel_pow = (np.abs(fm.fast_pow(a, p) - a**p) / a**p).max()

    ok = rel_exp <= 1e-6 and rel_ln <= 1e-6 and abs_ln_near <= 1e-9 and rel_pow <= 1e-5
    assert report(1, ok, f"exp {rel_exp:.2e} (<=1e-6), ln {rel_ln:.2e} (<=1e-6, "
                         f"near-1 abs {abs_ln_near:.2e}), pow {rel_pow:.2e} (<=1e-5)")


# --------------------------------------------------------------------------
# 2. lane equivalence
# --------------------------------------------------------------------------

def test_criterion_2_lane_equivalence():
    n = 10_000
    base = random_states(n, seed=21)
    worst_impl = 0.0
    bit_ok = True
    for scheme, cfg in (("explicit", CFG_E), ("implicit", CFG_I)):
        ref = base.copy()
        step_all(ref, 0.01, DEFAULT_PARAMS, cfg, n_lanes=1)
        for lanes in (2, 4, 8):
            f = base.copy()
            step_all(f, 0.01, DEFAULT_PARAMS, cfg, n_lanes=lanes)
            if scheme == "explicit":
                bit_ok &= bool(np.array_equal(f.states().view(np.int64),
                                              ref.states().view(np.int64)))
            else:
                worst_impl = max(worst_impl, float(np.abs(f.states() - ref.states()).max()))
    ok = bit_ok and worst_impl <= 1e-12
    assert report(2, ok, f"explicit bit-identical={bit_ok}, "
                         f"implicit max dev {worst_impl:.2e} (<=1e-12), n={n}")


# --------------------------------------------------------------------------
# 3. continuity invariant
# --------------------------------------------------------------------------

def test_criterion_3_continuity():
    rng = np.random.default_rng(33)
    worst = 0.0
    for _ in range(100):
        knots_t = np.concatenate([[0.0], np.sort(rng.uniform(0.1, 6.0, 5))])
        knots_T = rng.uniform(293.0, 2000.0, 6)
        times = np.linspace(0.0, knots_t[-1], 1500)
        temps = np.interp(times, knots_t, knots_T)
        for cfg in (CFG_E, CFG_I):
            out = integrate_history(times, temps, config=cfg)
            xsol = 1.0 - liquid_fraction(temps)
            worst = max(worst, float(np.abs(out.sum(axis=1) - xsol).max()))
    ok = worst <= 1e-12
    assert report(3, ok, f"max |sum - (1 - g(T))| = {worst:.2e} (<=1e-12), "
                         f"100 histories x 2 schemes")


# --------------------------------------------------------------------------
# 4. equilibrium convergence
# --------------------------------------------------------------------------

def test_criterion_4_equilibrium_convergence():
    worst = 0.0
    for t_hold in (1000.0, 1100.0, 1200.0):
        times = np.arange(0.0, 10_000.0 + 0.5, 1.0)
        temps = np.full_like(times, t_hold)
        out = integrate_history(times, temps, state0=PhaseState(0.0, 0.0, 1.0),
                                config=CFG_I)
        xa = out[-1, 0] + out[-1, 1]
        target = 1.0 - math.exp(-0.0068 * (1273.0 - t_hold))
        worst = max(worst, abs(xa - target))
    ok = worst <= 1e-3
    assert report(4, ok, f"max |X_alpha - X_alpha_eq| over holds = {worst:.2e} (<=1e-3)")


# --------------------------------------------------------------------------
# 5. Appendix-A oracle
# --------------------------------------------------------------------------

def _appendix_a_error(scheme, dt, t_end=1000.0):
    n = int(round(t_end / dt))
    times = dt * np.arange(n + 1)
    temps = np.full(n + 1, 1200.0)
    cfg = IntegratorConfig(scheme=scheme)
    out = integrate_history(times, temps, state0=PhaseState(0.9, 0.0, 0.1),
                            config=cfg)
    _, exact = analytic_beta_growth(1200.0, dt, n)
    return float(np.abs(out[1:, 2] - exact).max())


def test_criterion_5_appendix_a_explicit():
    err = _appendix_a_error("explicit", 1e-4)
    ok = err <= 1e-4
    assert report("5a", ok, f"explicit dt=1e-4 max |X_beta - closed form| = "
                            f"{err:.2e} (<=1e-4)")


def test_criterion_5_appendix_a_crank_nicolson():
    # Faithfully as specified; unattainable for the method as printed (the
    # 1e-15 hand-off releases the state inside the t^11 takeoff where no
    # second-order scheme at dt=1e-2 stays within 1e-4; see project notes).
    err = _appendix_a_error("crank_nicolson", 1e-2)
    ok = err <= 1e-4
    assert report("5b", ok, f"Crank-Nicolson dt=1e-2 max |X_beta - closed form| = "
                            f"{err:.2e} (<=1e-4)")


# --------------------------------------------------------------------------
# 6. scheme cross-check
# --------------------------------------------------------------------------

def test_criterion_6_scheme_cross_check():
    t_end = 10.0
    times_e = np.arange(0.0, t_end + 1e-9, 1e-5)
    temps_e = 1300.0 + (300.0 - 1300.0) * times_e / t_end
    out_e = integrate_history(times_e, temps_e, config=CFG_E)
    times_i = np.arange(0.0, t_end + 1e-9, 1e-3)
    temps_i = 1300.0 + (300.0 - 1300.0) * times_i / t_end
    out_i = integrate_history(times_i, temps_i, config=CFG_I)
    checks = np.linspace(0.1, 10.0, 100)
    sel_e = np.searchsorted(times_e, checks)
    sel_i = np.searchsorted(times_i, checks)
    dev = float(np.abs(out_e[sel_e] - out_i[sel_i]).max())
    ok = dev <= 1e-3
    assert report(6, ok, f"explicit(1e-5) vs CN(1e-3) max phase dev = "
                         f"{dev:.2e} (<=1e-3) at 100 output times")


# --------------------------------------------------------------------------
# 7, 8, 10. coupled builds
# --------------------------------------------------------------------------

def _build_cube(geometry, strategy, schedule, monitor=None):
    segs = []
    for layer in range(geometry.grid[3]):
        segs.extend(strategy(geometry.part_extent, 0.08 * MM, 0.96, 180.0, layer))
    scan = ScanPath(segs, dwell=schedule.interlayer_dwell)
    source = HeatSource(w_eff=180.0, radius=0.06 * MM, h_powder=geometry.voxel)
    return run_build(geometry, scan, schedule, source=source,
                     snapshot_hook=monitor)


@pytest.fixture(scope="module")
def cube_293():
    geometry = BuildGeometry(plate_size=(1.2 * MM, 1.2 * MM, 0.2 * MM),
                             part_size=(1.0 * MM, 1.0 * MM, 0.25 * MM),
                             voxel=0.05 * MM)
    schedule = BuildSchedule(dt_active=2e-5, interlayer_dwell=1.0,
                             initial_dwell_steps=2000, final_cooldown=20.0,
                             preheat=293.0)
    rc_checks = {"prev": None, "monotone": True}

    def monitor(label, t, field, fields):
        rc = field.r_c.copy()
        if rc_checks["prev"] is not None:
            rc_checks["monotone"] &= bool(np.all(rc >= rc_checks["prev"] - 1e-15))
        rc_checks["prev"] = rc

    field, fields, _ = _build_cube(geometry, serpentine, schedule, monitor)
    return field, fields, rc_checks


@pytest.fixture(scope="module")
def cube_600_pair():
    # heat-accumulating desk proxy: the long plate column under the part makes
    # the interlayer background settle near 900 K so alpha_s actually forms
    geometry = BuildGeometry(plate_size=(1.0 * MM, 1.0 * MM, 3.0 * MM),
                             part_size=(1.0 * MM, 1.0 * MM, 1.0 * MM),
                             voxel=0.05 * MM)
    schedule = BuildSchedule(dt_active=2e-5, interlayer_dwell=0.35,
                             initial_dwell_steps=500, final_cooldown=10.0,
                             preheat=600.0)
    rc_checks = {"prev": None, "monotone": True}

    def monitor(label, t, field, fields):
        rc = field.r_c.copy()
        if rc_checks["prev"] is not None:
            rc_checks["monotone"] &= bool(np.all(rc >= rc_checks["prev"] - 1e-15))
        rc_checks["prev"] = rc

    single = _build_cube(geometry, serpentine, schedule, monitor)
    islands = _build_cube(geometry, four_islands, schedule)
    return single, islands, rc_checks


def test_criterion_7_fully_martensitic(cube_293):
    field, fields, _ = cube_293
    melted = (field.state == 1) & (field.r_c >= 1.0)
    assert melted.sum() > 0
    flat = melted.ravel()
    xm = fields.x_alpha_m[flat]
    xb = fields.x_beta[flat]
    ok = (xm.min() >= 0.88 and xm.max() <= 0.9 + 1e-12
          and xb.min() >= 0.09 and xb.max() <= 0.12)
    assert report(7, ok, f"{melted.sum()} once-melted voxels: X_am in "
                         f"[{xm.min():.4f}, {xm.max():.4f}] (within [0.88, 0.9]), "
                         f"X_b in [{xb.min():.4f}, {xb.max():.4f}] (within [0.09, 0.12])")


def test_criterion_8_scan_strategy_sensitivity(cube_600_pair):
    (f1, g1, _), (f2, g2, _), _ = cube_600_pair
    nz, ny, nx = f1.shape
    melt = ((f1.state == 1) & (f1.r_c >= 1.0) & (f2.state == 1) & (f2.r_c >= 1.0))
    xs1 = g1.x_alpha_s.reshape(nz, ny, nx)
    xs2 = g2.x_alpha_s.reshape(nz, ny, nx)
    dmax = float(np.abs(xs1 - xs2)[melt].max())
    ok = dmax > 0.01
    assert report(8, ok, f"single vs four islands at 600 K preheat: max per-voxel "
                         f"|dX_as| = {dmax:.4f} (> 0.01); X_as up to "
                         f"{max(xs1[melt].max(), xs2[melt].max()):.3f}")


def test_criterion_10_thermal_sanity(cube_293, cube_600_pair):
    # insulated no-source enthalpy conservation over 1000 steps
    geometry = BuildGeometry(plate_size=(0.6 * MM, 0.6 * MM, 0.15 * MM),
                             part_size=(0.4 * MM, 0.4 * MM, 0.1 * MM),
                             voxel=0.05 * MM)
    schedule = BuildSchedule(preheat=293.0)
    field, _ = allocate_domain(geometry, schedule)
    rng = np.random.default_rng(4)
    m = field.active_mask()
    field.temperature_new[m] = rng.uniform(300.0, 1500.0, m.sum())
    field.commit_temperatures()
    e0 = field.enthalpy()
    for _ in range(1000):
        step_thermal(field, 2e-5, losses=False, bottom_dirichlet=None)
        field.commit_temperatures()
    drift = abs(field.enthalpy() - e0) / e0
    _, _, rc7 = cube_293
    _, _, rc8 = cube_600_pair
    ok = drift <= 1e-10 and rc7["monotone"] and rc8["monotone"]
    assert report(10, ok, f"enthalpy drift {drift:.2e} over 1000 steps (<=1e-10); "
                          f"r_c monotone in builds: {rc7['monotone'] and rc8['monotone']}")


# --------------------------------------------------------------------------
# 9. throughput ordering and roofline
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def throughput_table():
    results = {}
    for bs in (1, 10, 100):
        layout = generate_layout(bs, 400_000, seed=0)
        for scheme in ("explicit", "crank_nicolson"):
            for lanes in (1, 2, 4, 8):
                dof_s, sec, iters = measure_throughput(
                    layout, scheme=scheme, n_lanes=lanes,
                    repetitions=20, warmup=10)
                results[(bs, scheme, lanes)] = (dof_s, sec, iters)
    return results


def test_criterion_9_throughput_ordering(throughput_table):
    ok = True
    msgs = []
    for bs in (1, 10, 100):
        rates = [throughput_table[(bs, "explicit", l)][0] for l in (1, 2, 4, 8)]
        mono = all(b >= a for a, b in zip(rates, rates[1:]))
        ok &= mono
        msgs.append(f"block {bs}: " + "/".join(f"{r/1e9:.3f}" for r in rates)
                    + (" nondecreasing" if mono else " NOT nondecreasing"))
    assert report("9a", ok, "explicit GDoF/s vs lanes -- " + "; ".join(msgs))


def test_criterion_9_implicit_not_faster(throughput_table):
    ok = True
    for bs in (1, 10, 100):
        exp = throughput_table[(bs, "explicit", 8)][0]
        imp = throughput_table[(bs, "crank_nicolson", 8)][0]
        ok &= imp <= exp
    assert report("9b", ok, "implicit throughput <= explicit on every layout")


def test_criterion_9_memory_bound_saturation(throughput_table):
    # Stated machine-relative target; structurally out of reach on this host
    # (arithmetic ceiling below the 70% line; see project notes), kept as the
    # faithful red measurement.
    bw = measure_bandwidth()
    target = 0.7 * bw * 1e9 / 24.0
    got = throughput_table[(100, "explicit", 8)][0]
    ok = got >= target
    assert report("9c", ok, f"block-100 explicit {got/1e9:.3f} GDoF/s vs 70% of "
                            f"bandwidth/24B = {target/1e9:.3f} GDoF/s "
                            f"({100*got/target:.0f}% of target)")


def test_criterion_9_roofline_ceiling_respected(throughput_table):
    bw = measure_bandwidth()
    pk = measure_peak_flops()
    runs = []
    for bs in (1, 10, 100):
        for scheme in ("explicit", "crank_nicolson"):
            layout = generate_layout(bs, 400_000, seed=0)
            dof_s, sec, iters = throughput_table[(bs, scheme, 8)]
            flops = count_flops(layout, scheme=scheme, n_lanes=8, iters=iters)
            runs.append({"label": f"b{bs}_{scheme}", "flops": flops,
                         "bytes": 72 * layout.n_points, "seconds": sec})
    rep = roofline(runs, measured_bandwidth=bw, peak_flops=pk)
    ok = rep.respects_ceilings(slack=0.05)
    worst = max(r["gflops"] / r["ceiling"] for r in rep.rows)
    assert report("9d", ok, f"all measured points below min(compute, memory) "
                            f"ceiling (worst {100*worst:.0f}% of ceiling)")
