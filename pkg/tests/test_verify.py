import copy
import dataclasses

import numpy as np
import pytest

from caesuc.cavern import IDLE
from caesuc.formulation import FormulationOptions, build_model, vname
from caesuc.milp import SolutionVector
from caesuc.solver import BnbOptions, solve_mip
from caesuc.verify import (KPI_COLUMNS, SERIES_COLUMNS, CaesSeries, DecodeError, audit, compare_runs, decode,
                           kpi_csv, kpis, scaled_residuals, timeseries_csv, verify_cavern)

from conftest import short_desk

SEG = dict(segments_plus=4, segments_minus=4)


@pytest.fixture(scope="module")
def solved():
    case, scen = short_desk()
    out = {}
    for mode in ("model2", "no-caes"):
        form = build_model(case, scen, FormulationOptions.for_mode(mode, **SEG))
        res = solve_mip(form.model, BnbOptions(gap=1e-4, engine="highs"))
        assert res.solution.status == "optimal"
        out[mode] = (form, res)
    return case, scen, out


def test_decode_and_audit(solved):
    case, scen, out = solved
    for form, res in out.values():
        sched = decode(res.solution, form)
        checks = audit(sched, form.case, scen)
        assert checks["balance"] <= 1e-6
        assert checks["reserve_shortfall"] <= 1e-6
        assert sched.objective == pytest.approx(res.solution.objective)


def test_mass_telescopes(solved):
    case, _, out = solved
    form, res = out["model2"]
    sched = decode(res.solution, form)
    P, m0 = case.caes[0].params, case.caes[0].initial.m
    ser = sched.caes[(case.caes[0].id, 1)]
    net = sum(P.dt * (P.c_ain * a - P.c_aout * b) for a, b in zip(ser.p_ch, ser.p_dch))
    assert ser.m[-1] - m0 == pytest.approx(net, rel=1e-9, abs=1e-6)


def test_verify_does_not_modify_schedule(solved):
    case, _, out = solved
    form, res = out["model2"]
    sched = decode(res.solution, form)
    before = copy.deepcopy(sched)
    report = verify_cavern(sched, case)
    assert sched == before
    assert report.ok
    assert report.mean_rel_p < 0.01


def test_idle_from_equilibrium_has_no_deviation(solved):
    case, _, out = solved
    form, res = out["model2"]
    s = case.caes[0]
    P = s.params
    eq_p = P.equilibrium_pressure(s.initial.m)
    unit = dataclasses.replace(s, initial=dataclasses.replace(s.initial, T=P.wall_temperature, p=eq_p))
    case_eq = dataclasses.replace(case, caes=(unit,))
    sched = decode(res.solution, form)
    n = sched.n_periods
    sched.caes = {(s.id, 1): CaesSeries([IDLE] * n, [0.0] * n, [0.0] * n, [s.initial.m] * n,
                                        [P.wall_temperature] * n, [eq_p] * n, [0.0] * n)}
    report = verify_cavern(sched, case_eq)
    chk = report.checks[0]
    assert chk.max_rel_p <= 1e-12 and chk.max_rel_T <= 1e-12 and chk.max_mass_dev == 0.0


def test_corrupted_solution_names_the_row(solved):
    _, _, out = solved
    form, res = out["no-caes"]
    vals = res.solution.values.copy()
    h = form.index.get("P", 1, form.case.generators[0].id, 1)
    vals[h] += 25.0
    with pytest.raises(DecodeError, match=r"constraint \w+"):
        decode(SolutionVector(vals, res.solution.objective, "optimal"), form)


def test_fractional_binary_rejected(solved):
    _, _, out = solved
    form, res = out["no-caes"]
    vals = res.solution.values.copy()
    h = form.index.get("u", 1, form.case.generators[0].id)
    vals[h] = 0.5
    with pytest.raises(DecodeError, match=vname("u", 1, form.case.generators[0].id)):
        decode(SolutionVector(vals, 0.0, "feasible"), form)


def test_truncated_and_failed_solutions_rejected(solved):
    _, _, out = solved
    form, res = out["no-caes"]
    with pytest.raises(DecodeError, match="values"):
        decode(SolutionVector(res.solution.values[:-1], 0.0, "optimal"), form)
    with pytest.raises(DecodeError, match="infeasible"):
        decode(SolutionVector(np.zeros(0), float("nan"), "infeasible"), form)


def test_scaled_residuals_zero_at_optimum(solved):
    _, _, out = solved
    form, res = out["model2"]
    assert max(v for _, v in scaled_residuals(form.model, res.solution.values)) <= 1e-6


def test_compare_runs(solved):
    _, _, out = solved
    form, res = out["model2"]
    k = kpis(decode(res.solution, form), stats=form.statistics())
    text, table = compare_runs([k, dataclasses.replace(k, label="again")], times=False)
    rows = table.strip().splitlines()
    assert rows[0] == "label,cost,d_cost,wind_shed,d_wind_shed,nodes,binaries,rows"
    assert rows[2].split(",")[2] == "0.0" and rows[2].split(",")[4] == "0.0"
    assert "again" in text
    with pytest.raises(ValueError):
        compare_runs([k])
    with pytest.raises(ValueError):
        compare_runs([k, dataclasses.replace(k, case_name="other")])


def test_csv_headers_stable(solved):
    case, _, out = solved
    form, res = out["model2"]
    sched = decode(res.solution, form)
    report = verify_cavern(sched, case)
    k = kpis(sched, report, form.statistics(), solve_time=1.5)
    assert kpi_csv([k]).splitlines()[0] == ",".join(KPI_COLUMNS)
    assert "solve_time" not in kpi_csv([k], times=False)
    series = timeseries_csv(sched, report).splitlines()
    assert series[0] == ",".join(SERIES_COLUMNS)
    assert len(series) == 1 + sched.n_periods
    bare_form, bare_res = out["no-caes"]
    bare = timeseries_csv(decode(bare_res.solution, bare_form)).splitlines()
    assert bare[1].endswith("," * 10)


def test_kpis_probability_weighted(solved):
    _, _, out = solved
    form, res = out["no-caes"]
    sched = decode(res.solution, form)
    k = kpis(sched)
    assert k.wind_shed_mwh == pytest.approx(k.per_scenario[1]["wind_shed_mwh"])
    assert k.p_min is None
