"""Acceptance suite: one test per primary criterion, each printing a PASS or FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the verdict lines
are written straight to the terminal so they survive output capture.
"""
import contextlib
import itertools
import math
import time

import mpmath
import numpy as np
import pytest
from scipy.optimize import linprog

from caesuc.case import CaseError, bundled, load_case, loads_case
from caesuc.cavern import (CHARGE, DISCHARGE, IDLE, CavernState, derive_coefficients, simulate,
                           step_idle)
from caesuc.cli import RunConfig, run_pipeline
from caesuc.formulation import FormulationOptions, build_model
from caesuc.linearize import (PiecewiseGrid, linearize_product, mccormick_binary_p, mccormick_binary_T,
                              symmetric_grid)
from caesuc.milp import BINARY, EQ, GE, LE, MilpModel
from caesuc.solver import BnbOptions, solve_lp, solve_mip

from conftest import make_params


@contextlib.contextmanager
def criterion(capsys, name):
    try:
        yield
    except BaseException as exc:
        with capsys.disabled():
            print(f"\nFAIL  {name}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    with capsys.disabled():
        print(f"\nPASS  {name}")


def random_params(rng):
    return make_params(volume=rng.uniform(2e4, 2e5), wall_area=rng.uniform(5e3, 5e4),
                       heat_transfer=rng.uniform(0.05, 5.0), wall_temperature=rng.uniform(290, 330),
                       m_av0=rng.uniform(1e6, 1e7), dt=rng.choice([600.0, 900.0, 1200.0, 3600.0]))


# -- 1 ---------------------------------------------------------------------------------------------

def test_cavern_equilibrium_and_mass_telescoping(capsys):
    with criterion(capsys, "cavern equilibrium fixed point and mass telescoping"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(11)
        for _ in range(200):
            P = random_params(rng)
            m = rng.uniform(0.3, 3.0) * P.m_av0
            s0 = CavernState(m, P.wall_temperature, m * P.gas_constant * P.wall_temperature / P.volume)
            s1 = step_idle(s0, derive_coefficients(P), P)
            assert abs(s1.m - s0.m) / s0.m <= 1e-9
            assert abs(s1.T - s0.T) / s0.T <= 1e-9
            assert abs(s1.p - s0.p) / s0.p <= 1e-9
        P = make_params()
        init = CavernState(P.m_av0, P.wall_temperature, P.equilibrium_pressure(P.m_av0))
        for _ in range(10):
            plan, m = [], init.m
            for _ in range(100):
                mode = rng.choice([CHARGE, DISCHARGE, IDLE])
                if mode == CHARGE:
                    pw = rng.uniform(P.pch_min, P.pch_max)
                    plan.append((CHARGE, pw, 0.0))
                    m += P.c_ain * pw * P.dt
                elif mode == DISCHARGE and m - P.c_aout * P.pdch_max * P.dt > 0.3 * init.m:
                    pw = rng.uniform(P.pdch_min, P.pdch_max)
                    plan.append((DISCHARGE, 0.0, pw))
                    m -= P.c_aout * pw * P.dt
                else:
                    plan.append((IDLE, 0.0, 0.0))
            traj = simulate(plan, init, P)
            # same accumulation order: bit-for-bit
            assert traj.states[-1].m == m
            net = math.fsum(P.dt * (P.c_ain * a - P.c_aout * b) for _, a, b in plan)
            assert abs(traj.states[-1].m - init.m - net) <= 1e-12 * init.m
        assert time.perf_counter() - t0 < 1.0


# -- 2 ---------------------------------------------------------------------------------------------

def test_coefficient_identities(capsys):
    with criterion(capsys, "c10 / c11 identities to machine precision"):
        rng = np.random.default_rng(12)
        eps = np.finfo(float).eps
        mpmath.mp.dps = 50
        for _ in range(200):
            P = random_params(rng)
            c = derive_coefficients(P)
            a4 = P.heat_transfer * P.wall_area * P.dt / (P.m_av0 * P.cv)
            c10 = math.exp(-a4) - a4 * math.exp(-a4)
            c11 = (1 - c10) * P.gas_constant * P.wall_temperature / P.volume
            assert abs(c.a4 - a4) <= 2 * eps * a4
            assert abs(c.c10 - c10) <= 4 * eps * max(1.0, abs(c10))
            assert abs(c.c11 - c11) <= 4 * eps * abs(c11)
            # independent high-precision route
            a4m = mpmath.mpf(P.heat_transfer) * P.wall_area * P.dt / (mpmath.mpf(P.m_av0) * P.cv)
            c10m = (1 - a4m) * mpmath.exp(-a4m)
            c11m = (1 - c10m) * mpmath.mpf(P.gas_constant) * P.wall_temperature / P.volume
            assert abs(c.c10 - float(c10m)) <= 8 * eps * max(1.0, abs(c10))
            # 1 - c10 cancels when a4 is tiny; compare c11 against its own magnitude plus that rounding
            cancel = 8 * eps * float(mpmath.mpf(P.gas_constant) * P.wall_temperature / P.volume)
            assert abs(c.c11 - float(c11m)) <= 8 * eps * abs(float(c11m)) + cancel


# -- 3 ---------------------------------------------------------------------------------------------

def _feasible(model, values, tol=1e-9):
    """Rows and variable bounds both hold at ``values``."""
    for v, val in zip(model.variables, values):
        if val < v.lb - tol * max(1.0, abs(v.lb)) or val > v.ub + tol * max(1.0, abs(v.ub)):
            return False
    for con in model.constraints:
        lhs = sum(c * values[h] for h, c in con.coeffs.items())
        scale = tol * max(1.0, abs(con.rhs), *(abs(c * values[h]) for h, c in con.coeffs.items()))
        if (con.sense == LE and lhs > con.rhs + scale) or (con.sense == GE and lhs < con.rhs - scale) or \
                (con.sense == EQ and abs(lhs - con.rhs) > scale):
            return False
    return True


def test_mccormick_exactness(capsys):
    with criterion(capsys, "McCormick envelopes exact on 1000 random cases"):
        rng = np.random.default_rng(13)
        for case in range(1000):
            kind = "T" if case % 2 == 0 else "p"
            lo = rng.uniform(-50, 350) if kind == "T" else rng.uniform(0, 60)
            hi = lo + rng.uniform(0.01, 120)
            val = rng.uniform(lo, hi)
            b = float(rng.integers(0, 2))
            m = MilpModel()
            bh = m.add_variable("b", BINARY)
            xh = m.add_variable("x", lb=lo, ub=hi)
            q = (mccormick_binary_T if kind == "T" else mccormick_binary_p)(m, bh, xh)
            exact = b * val
            # route 1: rows and bounds accept the product and reject any other value
            point = np.zeros(m.n_vars)
            point[bh], point[xh], point[q] = b, val, exact
            assert _feasible(m, point)
            for delta in (1e-3, -1e-3):
                point[q] = exact + delta * max(1.0, hi - lo)
                assert not _feasible(m, point)
            # route 2: LP extremes of the auxiliary over the fixed (b, x)
            m.set_bounds(bh, b, b)
            m.set_bounds(xh, val, val)
            for sense in (1.0, -1.0):
                m.frozen = False
                m.set_objective({q: sense})
                sol = solve_lp(m.freeze(), engine="tableau")
                assert abs(sol.values[q] - exact) <= 1e-9 * max(1.0, abs(exact))


# -- 4 ---------------------------------------------------------------------------------------------

def test_piecewise_error_bound(capsys):
    with criterion(capsys, "piecewise square and product error bounds"):
        t0 = time.perf_counter()
        rng = np.random.default_rng(14)
        grids = [PiecewiseGrid.uniform(-3.0, 5.0, 16), PiecewiseGrid.uniform(0.0, 1.0, 7),
                 PiecewiseGrid.uniform(10.0, 40.0, 3), symmetric_grid(-0.7, 1.3, 16), symmetric_grid(-1, 1, 4)]
        for g in grids:
            zs = np.linspace(g.lo, g.hi, 2001)
            err = np.array([g.square(z) for z in zs]) - zs ** 2
            assert err.min() >= -1e-12 * max(1.0, g.hi ** 2)
            assert err.max() <= g.width ** 2 / 4 * (1 + 1e-9)
            for k, p in enumerate(g.points):
                assert abs(p - (g.lo + k * g.width)) <= 1e-12 * max(1.0, abs(g.hi))
                assert abs(g.square(p) - p * p) <= 1e-12 * max(1.0, p * p)
        for _ in range(20):
            xl, yl = rng.uniform(-5, 20), rng.uniform(0, 400)
            xu, yu = xl + rng.uniform(1, 10), yl + rng.uniform(5, 50)
            for normalize in (True, False):
                m = MilpModel()
                x = m.add_variable("x", lb=xl, ub=xu)
                y = m.add_variable("y", lb=yl, ub=yu)
                links = []
                n = int(rng.integers(2, 17))
                linearize_product(m, x, y, n_plus=n, n_minus=n, normalize=normalize, registry=links)
                link = links[0]
                wp, wm = link.grids[0].width, link.grids[1].width
                bound = link.scale * (wp ** 2 + wm ** 2) / 4
                assert bound == pytest.approx(link.error_bound, rel=1e-12)
                xs, ys = np.meshgrid(np.linspace(xl, xu, 41), np.linspace(yl, yu, 41))
                for xv, yv in zip(xs.ravel(), ys.ravel()):
                    assert abs(link.evaluate(xv, yv) - xv * yv) <= bound * (1 + 1e-9) + 1e-9
        assert time.perf_counter() - t0 < 5.0


# -- 5 ---------------------------------------------------------------------------------------------

TINY = """
[case]
name = "oracle{k}"
steps_per_hour = 1

[[buses]]
id = 1

[[generators]]
id = 1
bus = 1
p_min = {pmin1}
p_max = {pmax1}
cost_a = {a1}
cost_b = {b1}
startup_cost = {su1}
shutdown_cost = {sd1}
ramp_up_cost = 0.0
ramp_down_cost = 0.0
initial_on = {on1}

[[generators]]
id = 2
bus = 1
p_min = {pmin2}
p_max = {pmax2}
cost_a = {a2}
cost_b = {b2}
startup_cost = {su2}
shutdown_cost = {sd2}
ramp_up_cost = 0.0
ramp_down_cost = 0.0
initial_on = {on2}

[loads.shares]
1 = 1.0

[scenarios]
probabilities = [1.0]
load = [{load}]
wind = [[0.0, 0.0, 0.0]]
reserve = [{res}, {res}, {res}]
"""


def tiny_uc(rng, k):
    while True:
        f = {}
        for g in (1, 2):
            f[f"pmin{g}"] = round(rng.uniform(5, 30), 2)
            f[f"pmax{g}"] = round(f[f"pmin{g}"] + rng.uniform(20, 80), 2)
            f[f"a{g}"] = round(rng.uniform(10, 60), 2)
            f[f"b{g}"] = round(rng.uniform(0, 200), 2)
            f[f"su{g}"] = round(rng.uniform(0, 500), 2)
            f[f"sd{g}"] = round(rng.uniform(0, 100), 2)
            f[f"on{g}"] = str(bool(rng.integers(0, 2))).lower()
        res = round(rng.uniform(0, 10), 2)
        top = f["pmax1"] + f["pmax2"] - res
        floor = max(f["pmin1"], f["pmin2"]) if rng.uniform() < 0.9 else 1.0
        loads = [round(rng.uniform(floor, top), 2) for _ in range(3)]
        try:
            return loads_case(TINY.format(k=k, res=res, load=str(loads), **f))
        except CaseError:
            continue


def brute_force(form):
    """Enumerate every hourly commitment, solve the remaining LP with scipy, keep the best."""
    model, index = form.model, form.index
    c, A, senses, rhs, lb, ub = model.arrays()
    A = A.toarray()
    le = [i for i, s in enumerate(senses) if s == LE]
    ge = [i for i, s in enumerate(senses) if s == GE]
    eq = [i for i, s in enumerate(senses) if s == EQ]
    A_ub = np.vstack([A[le], -A[ge]])
    b_ub = np.concatenate([rhs[le], -rhs[ge]])
    gens = [g.id for g in form.case.generators]
    hours = range(1, index.n_hours + 1)
    ints = set(model.integer_handles)
    assert ints == set(index.handles("u")) | set(index.handles("v")) | set(index.handles("w"))
    best = math.inf
    for bits in itertools.product((0.0, 1.0), repeat=len(gens) * len(hours)):
        lo, hi = lb.copy(), ub.copy()
        u = dict(zip(itertools.product(hours, gens), bits))
        for (h, g), val in u.items():
            gen = next(x for x in form.case.generators if x.id == g)
            before = u[(h - 1, g)] if h > 1 else float(gen.initial_on)
            for fam, v in (("u", val), ("v", max(0.0, val - before)), ("w", max(0.0, before - val))):
                hh = index.get(fam, h, g)
                lo[hh] = hi[hh] = v
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A[eq], b_eq=rhs[eq], bounds=list(zip(lo, hi)),
                      method="highs-ds")
        if res.status == 0:
            best = min(best, res.fun + model.obj_constant)
    return best


def test_mip_oracle_equivalence(capsys):
    with criterion(capsys, "built-in B&B equals brute-force enumeration on 24 tiny UC instances"):
        rng = np.random.default_rng(15)
        solved = 0
        for k in range(24):
            case, scen = tiny_uc(rng, k)
            form = build_model(case, scen, FormulationOptions.for_mode("no-caes"))
            t0 = time.perf_counter()
            res = solve_mip(form.model, BnbOptions(gap=0.0, engine="tableau"))
            assert time.perf_counter() - t0 < 10.0
            best = brute_force(form)
            if math.isinf(best):
                assert res.status == "infeasible", k
                continue
            assert res.status == "optimal", k
            solved += 1
            assert abs(res.objective - best) <= 1e-6 * max(1.0, abs(best)), (k, res.objective, best)
        assert solved >= 20


# -- 6, 8, 10: desk case ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    base = tmp_path_factory.mktemp("desk")
    case, scen = load_case(bundled("desk_case"))
    t0 = time.perf_counter()
    m2 = run_pipeline(RunConfig(case="bundled:desk_case", mode="model2", segments_plus=16, segments_minus=16,
                                gap=1e-3), base / "model2", case, scen)
    elapsed = time.perf_counter() - t0
    bare = run_pipeline(RunConfig(case="bundled:desk_case", mode="no-caes", gap=1e-3), base / "bare", case, scen)
    return case, scen, m2, bare, elapsed


def test_end_to_end_consistency(capsys, desk):
    with criterion(capsys, "desk Model II: mean relative pressure error <= 1% and window respected"):
        case, _, m2, _, elapsed = desk
        assert m2.kpi.status in ("optimal", "feasible")
        assert m2.kpi.gap <= 1e-3
        assert m2.report.mean_rel_p <= 0.01
        assert m2.report.ok, [c.violations for c in m2.report.checks]
        assert m2.exit_code == 0
        assert elapsed < 600


def test_caes_benefit(capsys, desk):
    with criterion(capsys, "CAES lowers cost and wind shedding on the desk case"):
        _, _, m2, bare, _ = desk
        assert m2.kpi.total_cost <= bare.kpi.total_cost + 1e-3 * abs(bare.kpi.total_cost)
        assert m2.kpi.wind_shed_mwh <= bare.kpi.wind_shed_mwh + 1e-6


def test_warm_start_reduces_nodes(capsys, desk):
    with criterion(capsys, "const-temp seeded Model II needs no more nodes than a cold solve"):
        case, scen, m2, _, _ = desk
        seeded = m2.kpi.nodes           # seed solve plus the Model II search
        form = build_model(case, scen, FormulationOptions.for_mode("model2"))
        # a cold run cut off at the limit has used at least that many nodes
        cold = solve_mip(form.model, BnbOptions(gap=1e-3, node_limit=seeded + 1))
        assert seeded <= cold.nodes, (seeded, cold.nodes, cold.status)


# -- 7 ---------------------------------------------------------------------------------------------

def test_constant_temperature_failure_mode(capsys, tmp_path):
    with criterion(capsys, "deep-cycle case: const-temp schedule leaves the window, Model II does not"):
        case, scen = load_case(bundled("deep_cycle"))
        P = case.caes[0].params
        ct = run_pipeline(RunConfig(case="bundled:deep_cycle", mode="const-temp"), tmp_path / "ct", case, scen)
        assert not ct.report.ok
        assert min(c.p_min_sim for c in ct.report.checks) < P.p_min
        m2 = run_pipeline(RunConfig(case="bundled:deep_cycle", mode="model2", node_limit=500),
                          tmp_path / "m2", case, scen)
        assert m2.report.ok, [c.violations for c in m2.report.checks]
        assert min(c.p_min_sim for c in m2.report.checks) >= P.p_min


# -- 9 ---------------------------------------------------------------------------------------------

def test_model_two_strictly_smaller(capsys):
    with criterion(capsys, "Model II has strictly fewer binaries and constraints than Model I"):
        case, scen = load_case(bundled("desk_case"))
        s1 = build_model(case, scen, FormulationOptions.for_mode("model1")).statistics()
        s2 = build_model(case, scen, FormulationOptions.for_mode("model2")).statistics()
        assert s2["binaries"] < s1["binaries"]
        assert s2["constraints"] < s1["constraints"]
