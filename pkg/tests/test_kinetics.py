import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference as ref
from ti64micro import kinetics as kin
from ti64micro.kinetics import (
    DEFAULT_PARAMS,
    KineticsParams,
    PhaseState,
    apply_corrections,
    compute_rates,
    diffusion_rate_k,
    liquid_fraction,
    solid_fraction,
    x_alpha_eq,
    x_alpha_m_eq,
)


def test_default_parameters_match_published_tables():
    p = DEFAULT_PARAMS
    assert p.t_liq == 1928.0 and p.t_sol == 1878.0
    assert p.t_alpha_s_start == 1273.0 and p.t_alpha_s_end == 935.0
    assert p.t_alpha_m_start == 848.0 and p.t_inf == 293.0
    assert p.k_alpha_eq == 0.0068 and p.k_alpha_m_eq == 0.00415
    assert p.c_alpha_s == 2.51 and p.c_beta == 11.0
    assert p.k1 == 0.294 and p.k2 == 850.0 and p.k3 == 0.0337
    assert p.f == 3.8 and p.t_alpha_s_reg == 100.0


def test_liquid_fraction_cases():
    assert liquid_fraction(1000.0) == 0.0
    assert liquid_fraction(1903.0) == 0.5
    assert liquid_fraction(2000.0) == 1.0


def test_x_alpha_eq_cases():
    # at the window top the exponent is 0; fast_exp(0) is off by ~6e-11
    assert x_alpha_eq(1273.0) == pytest.approx(0.0, abs=1e-9)
    assert x_alpha_eq(900.0) == 0.9
    exact = 1.0 - math.exp(-0.0068 * 200.0)  # 0.7433392230464441
    assert x_alpha_eq(1073.0) == pytest.approx(exact, rel=1e-6)


def test_x_alpha_m_eq_cases():
    # the raw Koistinen-Marburger value 0.9000664... clamps to the 0.9 plateau
    assert 1.0 - math.exp(-0.00415 * 555.0) > 0.9
    assert x_alpha_m_eq(293.0, 0.0) == pytest.approx(0.9, abs=1e-12)
    assert x_alpha_m_eq(900.0, 0.3) == 0.0
    assert x_alpha_m_eq(293.0, 0.9) == pytest.approx(0.0, abs=1e-12)


def test_x_alpha_m_eq_ceiling_property():
    rng = np.random.default_rng(0)
    t = rng.uniform(200.0, 2000.0, 5000)
    xs = rng.uniform(0.0, 0.9, 5000)
    assert np.all(xs + x_alpha_m_eq(t, xs) <= 0.9 + 1e-12)


def test_diffusion_rate_k():
    k_as, k_b = diffusion_rate_k(850.0)
    assert k_as == pytest.approx(0.147, rel=1e-9)
    assert k_b == pytest.approx(3.8 * 0.147, rel=1e-9)
    k_as, _ = diffusion_rate_k(5000.0)
    assert k_as == pytest.approx(0.294, rel=1e-6)
    exact = 0.294 / (1.0 + math.exp(-0.0337 * 350.0))
    assert diffusion_rate_k(1200.0)[0] == pytest.approx(exact, rel=1e-6)


def test_rates_stuck_states_are_exact_zero():
    r = compute_rates(PhaseState(0.0, 0.0, 1.0), 1200.0)
    assert r.d_x_alpha_s == 0.0 and r.d_x_alpha_m == 0.0
    r = compute_rates(PhaseState(0.9, 0.0, 0.1), 1200.0)
    assert r.d_x_alpha_s == 0.0 and r.d_x_alpha_m == 0.0


def test_rates_against_reference_oracle():
    r = compute_rates(PhaseState(0.45, 0.0, 0.55), 1000.0)
    ds, dm = ref.ref_rates(0.45, 0.0, 1000.0)
    assert r.d_x_alpha_s == pytest.approx(ds, rel=1e-5)
    assert dm == 0.0 and r.d_x_alpha_m == 0.0


def test_rates_against_reference_oracle_random():
    rng = np.random.default_rng(5)
    for _ in range(300):
        xs = rng.uniform(0, 0.9)
        xm = rng.uniform(0, 0.9 - xs)
        t = rng.uniform(300, 1400)
        r = compute_rates(PhaseState(xs, xm, 1 - xs - xm), t)
        ds, dm = ref.ref_rates(xs, xm, t)
        assert r.d_x_alpha_s == pytest.approx(ds, rel=1e-5, abs=1e-300)
        assert r.d_x_alpha_m == pytest.approx(dm, rel=1e-5, abs=1e-300)


def test_rates_branch_gating():
    t = 1000.0
    xa_eq = x_alpha_eq(t)
    # below equilibrium: only the growth branch fires
    r = compute_rates(PhaseState(0.2, 0.0, 0.8), t)
    assert r.d_x_alpha_s > 0.0 and r.d_x_alpha_m == 0.0
    # above equilibrium with no martensite: only dissolution fires
    r = compute_rates(PhaseState(min(xa_eq + 0.02, 0.89), 0.0, 0.0), t)
    assert r.d_x_alpha_s < 0.0 and r.d_x_alpha_m == 0.0
    # martensite present adds the alpha_m -> alpha_s channel
    r = compute_rates(PhaseState(0.2, 0.1, 0.7), t)
    assert r.d_x_alpha_m < 0.0


def test_rates_equilibrium_fixed_point():
    for t in (1000.0, 1100.0, 1200.0):
        r = compute_rates(PhaseState(x_alpha_eq(t), 0.0, 1 - x_alpha_eq(t)), t)
        assert abs(r.d_x_alpha_s) <= 1e-12
        assert abs(r.d_x_alpha_m) <= 1e-12


def test_corrections_negative_clamp():
    s = apply_corrections(PhaseState(-1e-9, 0.0, 1.0), 1000.0)
    assert s.x_alpha_s == 0.0


def test_corrections_instant_martensite():
    s = apply_corrections(PhaseState(0.0, 0.0, 1.0), 293.0)
    assert s.x_alpha_m == pytest.approx(0.9, abs=1e-12)
    assert s.x_beta == pytest.approx(0.1, abs=1e-12)


def test_corrections_declared_order():
    # dissolution (step 3) applies before the cap (step 5) would be needed
    s = apply_corrections(PhaseState(0.6, 0.5, 0.0), 1000.0)
    xs_e, xm_e, xb_e = ref.ref_corrections(0.6, 0.5, 1000.0)
    assert xm_e == pytest.approx(ref.ref_x_alpha_eq(1000.0) - 0.6, rel=1e-12)
    assert s.x_alpha_s == pytest.approx(xs_e, abs=1e-10)
    assert s.x_alpha_m == pytest.approx(xm_e, abs=1e-10)
    assert s.x_beta == pytest.approx(xb_e, abs=1e-10)


def test_corrections_cap_on_overshoot():
    # the dissolution step zeroes martensite whenever the total exceeds the
    # equilibrium, so only a lone alpha_s overshoot can reach the cap
    s = apply_corrections(PhaseState(1.0, 0.5, 0.0), 500.0)
    assert s.x_alpha_s == pytest.approx(0.9, abs=1e-12)
    assert s.x_alpha_m == 0.0
    assert s.x_alpha_s + s.x_alpha_m <= 0.9 + 1e-12


def test_corrections_regularization_ramp():
    # halfway through the interval the cap is 0.45
    s = apply_corrections(PhaseState(0.9, 0.0, 0.1), 1323.0)
    assert s.x_alpha_s == pytest.approx(0.45, abs=1e-9)
    s = apply_corrections(PhaseState(0.9, 0.0, 0.1), 1500.0)
    assert s.x_alpha_s == 0.0


def test_corrections_melting_leaves_only_beta():
    s = apply_corrections(PhaseState(0.5, 0.2, 0.3), 1900.0)
    assert s.x_alpha_s == 0.0 and s.x_alpha_m == 0.0
    assert s.x_beta == pytest.approx(solid_fraction(1900.0), abs=1e-12)
    s = apply_corrections(PhaseState(0.5, 0.2, 0.3), 2000.0)
    assert s.as_tuple() == (0.0, 0.0, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(min_value=-0.2, max_value=1.2),
       st.floats(min_value=-0.2, max_value=1.2),
       st.floats(min_value=250.0, max_value=2100.0))
def test_corrections_postconditions(xs, xm, t):
    s = apply_corrections(PhaseState(xs, xm, 0.0), t)
    assert 0.0 <= s.x_alpha_s <= 0.9 + 1e-12
    assert 0.0 <= s.x_alpha_m <= 0.9 + 1e-12
    assert s.x_alpha_s + s.x_alpha_m <= 0.9 + 1e-12
    assert 0.0 <= s.x_beta <= 1.0
    total = s.x_alpha_s + s.x_alpha_m + s.x_beta
    assert abs(total - solid_fraction(t)) <= 1e-12


def test_corrections_match_reference_randomly():
    rng = np.random.default_rng(11)
    for _ in range(500):
        xs = rng.uniform(-0.1, 1.0)
        xm = rng.uniform(-0.1, 1.0)
        t = rng.uniform(250.0, 2100.0)
        s = apply_corrections(PhaseState(xs, xm, 0.0), t)
        e = ref.ref_corrections(xs, xm, t)
        assert s.x_alpha_s == pytest.approx(e[0], abs=1e-9)
        assert s.x_alpha_m == pytest.approx(e[1], abs=1e-9)
        assert s.x_beta == pytest.approx(e[2], abs=1e-9)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(2)
    t = rng.uniform(300.0, 2000.0, 64)
    assert np.array_equal(x_alpha_eq(t),
                          np.array([x_alpha_eq(float(v)) for v in t]))
    xs = rng.uniform(0.0, 0.9, 64)
    got = x_alpha_m_eq(t, xs)
    ref_v = np.array([x_alpha_m_eq(float(a), float(b)) for a, b in zip(t, xs)])
    assert np.array_equal(got, ref_v)


def test_parameter_overrides():
    p = DEFAULT_PARAMS.with_overrides(k1=0.5)
    assert p.k1 == 0.5 and p.k2 == 850.0
    kt = p.kernel_tuple()
    assert kt.k1 == 0.5
    assert kt.exp_b_lo == pytest.approx(10.0 / 11.0)
