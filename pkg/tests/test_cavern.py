import math
import random

import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from caesuc import cavern
from caesuc.cavern import (CHARGE, DISCHARGE, IDLE, CavernError, CavernState,
                           derive_coefficients, step_charge, step_discharge, step_idle)

from conftest import make_params


# Independent oracle: the printed charge/discharge equations and the idle
# relaxation T' = T_RW + (T - T_RW)*exp(-a4*m_av0/m), expanded to first order
# in m around m_av0, solved symbolically with sympy.
m, T, p, md, Tn, pn = sp.symbols("m T p mdot Tn pn")


def oracle_step(mode, state, mdot, prm):
    k = sp.Rational(prm.k).limit_denominator(1000)
    dt, R, V = prm.dt, prm.gas_constant, prm.volume
    Trw, m_av0 = prm.wall_temperature, prm.m_av0
    cv, hA = prm.cv, prm.heat_transfer * prm.wall_area
    c4 = hA / cv
    a2 = (R * prm.inlet_temperature) ** k / (V**k * prm.inlet_pressure ** (k - 1))
    subs = {m: state.m, T: state.T, p: state.p, md: mdot}
    if mode == CHARGE:
        c1 = (k - 2) * dt - sp.Rational(1, 2) * (k - 2) * dt**2 / (cv * m_av0)
        eqT = -m * Tn + T * m + c1 * md * T + c4 * Trw * dt
        eqp = -m * pn + p * m + (k - 1) * dt * p * md + a2 * dt * k * m_av0 ** (k - 1) * m * md
        m_next = state.m + mdot * dt
    elif mode == DISCHARGE:
        c8 = (c4 * dt**2 / (2 * m_av0) - dt) * (k - 1)
        c9 = sp.Rational(1, 2) * c4 * R * dt**2 * k / V
        eqT = -m * Tn + m * T + c8 * T * md + c4 * dt * Trw
        eqp = -m * pn + m * p - k * dt * md * p - c4 * R / V * dt * m * T + c9 * T * md
        m_next = state.m - mdot * dt
    else:
        x = sp.symbols("x")
        a4 = hA * dt / (m_av0 * cv)
        f = sp.exp(-a4 * m_av0 / x)
        decay = f.subs(x, m_av0) + sp.diff(f, x).subs(x, m_av0) * (m - m_av0)
        eqT = Trw + (T - Trw) * decay - Tn
        # ideal gas: p = m R T / V before and after, so p' = m R T'/V with T eliminated via p
        eqp = m * R / V * (Trw + (p * V / (m * R) - Trw) * decay) - pn
        m_next = state.m
    Tv = sp.solve(eqT.subs(subs), Tn)[0]
    pv = sp.solve(eqp.subs(subs), pn)[0]
    return float(m_next), float(Tv), float(pv)


def test_coefficients_trivial_a4_c10_c11():
    prm = make_params(heat_transfer=1.0, wall_area=1.0, dt=1.0, m_av0=1.0, cv=1.0,
                      gas_constant=1.0, wall_temperature=300.0, volume=100.0)
    co = derive_coefficients(prm)
    assert co.a4 == 1.0
    assert co.c10 == 0.0
    assert co.c11 == pytest.approx(3.0, abs=1e-15)


def test_coefficient_identities(params):
    co = derive_coefficients(params)
    assert co.a4 > 0
    assert co.c10 == math.exp(-co.a4) - co.a4 * math.exp(-co.a4)
    assert co.c11 == (1 - co.c10) * params.gas_constant * params.wall_temperature / params.volume


def test_derive_rejects_zero_mass():
    with pytest.raises(CavernError):
        make_params(m_av0=0.0)


def test_flows_from_power(params):
    assert cavern.flows_from_power(0, 0, params) == (0, 0)
    prm = make_params(c_ain=0.4, c_aout=0.37)
    assert cavern.flows_from_power(60, 0, prm)[0] == pytest.approx(24.0)
    assert cavern.flows_from_power(0, 100, prm)[1] == pytest.approx(37.0)
    with pytest.raises(CavernError):
        cavern.flows_from_power(5, 5, prm)


def test_charge_zero_flow_wall_term(params):
    co = derive_coefficients(params)
    s = CavernState(params.m_av0, params.wall_temperature, 50.0)
    nxt = step_charge(s, 0.0, co, params)
    assert nxt.T == pytest.approx(params.wall_temperature * (1 + co.c4 * params.dt / s.m), rel=1e-14)


def test_adiabatic_no_flow_fixed_point():
    prm = make_params(heat_transfer=0.0)
    co = derive_coefficients(prm)
    s = CavernState(1.0e6, 300.0, 50.0)
    for nxt in (step_charge(s, 0.0, co, prm), step_discharge(s, 0.0, co, prm), step_idle(s, co, prm)):
        assert (nxt.m, nxt.T, nxt.p) == (s.m, s.T, s.p)


def test_discharge_no_flow_heat_term(params):
    co = derive_coefficients(params)
    s = CavernState(3.0e6, 300.0, 50.0)
    nxt = step_discharge(s, 0.0, co, params)
    expected = s.p - co.c4 * params.gas_constant / params.volume * params.dt * s.T
    assert nxt.p == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("mode,state,mdot", [
    (CHARGE, CavernState(1000.0, 300.0, 50.0), 10.0),
    (DISCHARGE, CavernState(1000.0, 310.0, 60.0), 0.05),
    (CHARGE, CavernState(3.5e6, 305.0, 52.0), 90.0),
    (DISCHARGE, CavernState(4.1e6, 318.0, 63.0), 120.0),
    (IDLE, CavernState(3.5e6, 322.0, 54.0), 0.0),
    (IDLE, CavernState(4.2e6, 290.0, 59.0), 0.0),
])
def test_step_matches_symbolic_oracle(params, mode, state, mdot):
    co = derive_coefficients(params)
    fn = {CHARGE: lambda: step_charge(state, mdot, co, params),
          DISCHARGE: lambda: step_discharge(state, mdot, co, params),
          IDLE: lambda: step_idle(state, co, params)}[mode]
    got = fn()
    want = oracle_step(mode, state, mdot, params)
    assert got.m == pytest.approx(want[0], rel=1e-12)
    assert got.T == pytest.approx(want[1], rel=1e-10)
    assert got.p == pytest.approx(want[2], rel=1e-10)


def test_discharge_rejects_emptying(params):
    co = derive_coefficients(params)
    with pytest.raises(CavernError):
        step_discharge(CavernState(100.0, 300.0, 1.0), 1.0, co, params)


def test_idle_unit_decay_coefficient():
    prm = make_params(heat_transfer=1.0, wall_area=717.0 * 3.8e6 / 1200.0)
    co = derive_coefficients(prm)
    assert co.a4 == pytest.approx(1.0)
    g = cavern.idle_gain(co, prm)
    assert g * prm.m_av0 + co.c10 == pytest.approx(math.exp(-1.0), rel=1e-12)
    s = CavernState(prm.m_av0, 330.0, prm.equilibrium_pressure(prm.m_av0, 330.0))
    nxt = step_idle(s, co, prm)
    Trw = prm.wall_temperature
    assert nxt.T == pytest.approx(math.exp(-1) * 330 + (1 - math.exp(-1)) * Trw, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(mass=st.floats(1e3, 1e8), h=st.floats(0.0, 50.0))
def test_idle_equilibrium_fixed_point(mass, h):
    prm = make_params(heat_transfer=h)
    co = derive_coefficients(prm)
    s = CavernState(mass, prm.wall_temperature, prm.equilibrium_pressure(mass))
    nxt = step_idle(s, co, prm)
    assert abs(nxt.T - s.T) <= 1e-9 * s.T
    assert abs(nxt.p - s.p) <= 1e-9 * s.p
    assert nxt.m == s.m


def test_idle_example_spec_units():
    prm = make_params(m_av0=4e6, gas_constant=0.000287, wall_temperature=310.0)
    co = derive_coefficients(prm)
    s = CavernState(4e6, 310.0, 4e6 * 0.000287 * 310.0 / prm.volume)
    nxt = step_idle(s, co, prm)
    assert nxt.T == pytest.approx(s.T, rel=1e-12)
    assert nxt.p == pytest.approx(s.p, rel=1e-12)


def test_monotone_without_heat_exchange():
    prm = make_params(heat_transfer=0.0)
    co = derive_coefficients(prm)
    s = CavernState(3.8e6, 310.0, 56.0)
    assert step_charge(s, 50.0, co, prm).p > s.p
    assert step_discharge(s, 50.0, co, prm).p < s.p


def random_schedule(rng, n, prm):
    out = []
    for _ in range(n):
        mode = rng.choice([CHARGE, DISCHARGE, IDLE])
        if mode == CHARGE:
            out.append((mode, rng.uniform(prm.pch_min, prm.pch_max), 0.0))
        elif mode == DISCHARGE:
            out.append((mode, 0.0, rng.uniform(prm.pdch_min, prm.pdch_max) * 0.3))
        else:
            out.append((mode, 0.0, 0.0))
    return out


def test_simulate_composes_single_steps(params, equilibrium):
    rng = random.Random(3)
    sched = random_schedule(rng, 6, params)
    traj = cavern.simulate(sched, equilibrium, params)
    state = equilibrium
    for t, (mode, pc, pd) in enumerate(sched):
        mdot = params.c_ain * pc if mode == CHARGE else params.c_aout * pd
        nm, nT, np_ = oracle_step(mode, state, mdot, params)
        assert traj.states[t + 1].m == pytest.approx(nm, rel=1e-12)
        assert traj.states[t + 1].T == pytest.approx(nT, rel=1e-9)
        assert traj.states[t + 1].p == pytest.approx(np_, rel=1e-9)
        state = CavernState(nm, nT, np_)
    assert len(traj.states) == 7 and len(traj.modes) == 6


def test_simulate_idle_constant(params, equilibrium):
    traj = cavern.simulate([(IDLE, 0, 0)] * 10, equilibrium, params)
    for s in traj.states:
        assert s.p == pytest.approx(equilibrium.p, rel=1e-12)
        assert s.T == pytest.approx(equilibrium.T, rel=1e-12)


def test_simulate_charge_then_discharge_restores_mass(params, equilibrium):
    p_ch = 50.0
    p_dch = p_ch * params.c_ain / params.c_aout
    traj = cavern.simulate([(CHARGE, p_ch, 0.0), (DISCHARGE, 0.0, p_dch)], equilibrium, params)
    assert traj.states[-1].m == pytest.approx(equilibrium.m, rel=1e-15)


def test_mass_telescoping_and_determinism(params, equilibrium):
    rng = random.Random(11)
    sched = random_schedule(rng, 100, params)
    a = cavern.simulate(sched, equilibrium, params)
    b = cavern.simulate(sched, equilibrium, params)
    assert a.states == b.states
    net = math.fsum((i - o) * params.dt for i, o in zip(a.mdot_in, a.mdot_out))
    assert a.states[-1].m - a.states[0].m == pytest.approx(net, rel=1e-12, abs=1e-6)


def test_simulate_flags_pressure_violation(params):
    s = CavernState(params.mass_from(47.0, 310.0), 310.0, 47.0)
    traj = cavern.simulate([(DISCHARGE, 0.0, 100.0)] * 3, s, params)
    assert traj.first_violation == 0


def test_simulate_rejects_inconsistent_schedule(params, equilibrium):
    with pytest.raises(CavernError):
        cavern.simulate([(CHARGE, 0.0, 20.0)], equilibrium, params)


def test_constant_temp_pressure(params):
    assert cavern.constant_temp_pressure(1e-300, params) == pytest.approx(0.0)
    p1 = cavern.constant_temp_pressure(1e6, params)
    assert cavern.constant_temp_pressure(2e6, params) == pytest.approx(2 * p1, rel=1e-15)
    m_min = params.volume * params.p_min / (params.gas_constant * params.T_con)
    assert cavern.constant_temp_pressure(m_min, params) == pytest.approx(params.p_min, rel=1e-14)


def test_mass_bounds(params):
    lo, hi = cavern.mass_bounds(params)
    assert lo == pytest.approx(46.0 * 60_000 / (0.00287 * 340.0), rel=1e-14)
    assert hi == pytest.approx(66.0 * 60_000 / (0.00287 * 280.0), rel=1e-14)
    # degenerate temperature window collapses to the constant-model inversion
    prm = make_params(T_min=309.999999, T_max=310.000001)
    lo, hi = cavern.mass_bounds(prm)
    assert lo == pytest.approx(prm.mass_from(prm.p_min, prm.T_con), rel=1e-6)
    assert hi == pytest.approx(prm.mass_from(prm.p_max, prm.T_con), rel=1e-6)
