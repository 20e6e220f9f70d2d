"""Decoding, forward-simulation checks, KPIs and CSV reports."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .cavern import (CHARGE, DISCHARGE, IDLE, CavernError, CavernState, simulate)
from .formulation import Formulation
from .milp import GE, LE, SolutionVector

RESIDUAL_TOL = 1e-5
INTEGRALITY_TOL = 1e-6


class DecodeError(ValueError):
    pass


class VerificationError(RuntimeError):
    pass


@dataclass
class CaesSeries:
    """One CAES unit in one scenario, steps 1..n."""

    modes: list[str]
    p_ch: list[float]
    p_dch: list[float]
    m: list[float]
    T: list[float] | None                # None for the constant-temperature model
    p: list[float]
    p_tolerance: list[float]             # cumulative piecewise error bound on pressure, bar


@dataclass
class Schedule:
    case_name: str
    label: str
    n_periods: int
    n_scenarios: int
    steps_per_hour: int
    objective: float
    status: str
    commitment: dict                     # (hour, gen) -> 0/1
    startups: dict
    shutdowns: dict
    dispatch: dict                       # (t, gen, j) -> MW
    wind: dict                           # (t, farm, j) -> MW
    wind_max: dict
    load_shed: dict                      # (t, bus, j) -> MW
    load: dict                           # (t, j) -> system MW
    caes: dict = field(default_factory=dict)    # (unit, j) -> CaesSeries
    flows: dict = field(default_factory=dict)   # (t, line, j) -> MW
    psi: dict = field(default_factory=dict)     # (t, j) -> scenario probability

    @property
    def hours_per_step(self) -> float:
        return 1.0 / self.steps_per_hour


def scaled_residuals(model, x) -> list[tuple[str, float]]:
    """Row violations divided by max(1, |rhs|, largest |a_k x_k|)."""
    out = []
    for con in model.constraints:
        terms = [c * x[h] for h, c in con.coeffs.items()]
        lhs = math.fsum(terms)
        scale = max([1.0, abs(con.rhs)] + [abs(v) for v in terms])
        if con.sense == LE:
            viol = max(0.0, lhs - con.rhs)
        elif con.sense == GE:
            viol = max(0.0, con.rhs - lhs)
        else:
            viol = abs(lhs - con.rhs)
        out.append((con.name, viol / scale))
    return out


def pressure_tolerance(form: Formulation, unit: int, j: int) -> list[float]:
    """Cumulative first-order bound on the pressure error introduced by the piecewise products."""
    index = form.index
    out, total = [], 0.0
    link_of = {lk.product: lk for lk in index.links}
    model = form.model
    for t in range(1, index.n_periods + 1):
        step = index.steps.get((t, unit, j))
        if step is None:
            out.append(total)
            continue
        m_ref = step.prev["m"]
        m_lo = m_ref if not isinstance(m_ref, int) else model.variables[m_ref].lb
        worst = 0.0
        for mode in (CHARGE, DISCHARGE, IDLE):
            bil, _, _ = step.equations[(mode, "p")]
            err = sum(abs(c) * link_of[w].error_bound for c, _, _, w in bil)
            # process outputs enter with coefficient -m; idle outputs with -1
            worst = max(worst, err / (1.0 if mode == IDLE else m_lo))
        total += worst
        out.append(total)
    return out


def decode(solution: SolutionVector, form: Formulation, tol: float = RESIDUAL_TOL) -> Schedule:
    if solution.status not in ("optimal", "feasible"):
        raise DecodeError(f"cannot decode a {solution.status} solution")
    model, index, case, scen = form.model, form.index, form.case, form.scenarios
    x = np.asarray(solution.values, dtype=float).copy()
    if len(x) != model.n_vars:
        raise DecodeError(f"solution has {len(x)} values, model has {model.n_vars} variables")
    for h in model.integer_handles:
        if abs(x[h] - round(x[h])) > INTEGRALITY_TOL:
            raise DecodeError(f"{model.variables[h].name} = {x[h]} is not integral")
        x[h] = round(x[h])
    bad = max(scaled_residuals(model, x), key=lambda r: r[1], default=(None, 0.0))
    if bad[1] > tol:
        raise DecodeError(f"constraint {bad[0]} violated by {bad[1]:.3g} (scaled)")
    for v, val in zip(model.variables, x):
        if val < v.lb - tol * max(1.0, abs(v.lb)) or val > v.ub + tol * max(1.0, abs(v.ub)):
            raise DecodeError(f"variable {v.name} = {val} outside [{v.lb}, {v.ub}]")

    fam = index.families
    pick = lambda name: {k: float(x[h]) for k, h in fam.get(name, {}).items()}
    n_t, n_j = scen.n_periods, scen.n_scenarios
    sched = Schedule(
        case.name, model.name, n_t, n_j, case.steps_per_hour, float(solution.objective), solution.status,
        {k: int(v) for k, v in pick("u").items()}, {k: int(v) for k, v in pick("v").items()},
        {k: int(v) for k, v in pick("w").items()}, pick("P"), pick("W"),
        {(t, wf.id, j): scen.wind_max(wf, t - 1, j - 1) for t in range(1, n_t + 1)
         for wf in case.wind for j in range(1, n_j + 1)},
        pick("ls"), {(t, j): scen.load[j - 1][t - 1] for t in range(1, n_t + 1) for j in range(1, n_j + 1)},
        flows=pick("f"),
        psi={(t, j): scen.psi(t - 1, j - 1) for t in range(1, n_t + 1) for j in range(1, n_j + 1)})
    for s in case.caes:
        for j in range(1, n_j + 1):
            modes, pc, pd, ms, Ts, ps = [], [], [], [], [], []
            for t in range(1, n_t + 1):
                key = (t, s.id, j)
                a, b = x[index.get("alpha", *key)], x[index.get("beta", *key)]
                mode = CHARGE if a else DISCHARGE if b else IDLE
                modes.append(mode)
                pc.append(float(x[index.get("Pch", *key)]) if mode == CHARGE else 0.0)
                pd.append(float(x[index.get("Pdch", *key)]) if mode == DISCHARGE else 0.0)
                ms.append(float(x[index.get("ms", *key)]))
                ps.append(float(x[index.get("ps", *key)]))
                th = index.find("Ts", *key)
                Ts.append(float(x[th]) if th is not None else math.nan)
            has_T = "Ts" in fam
            tolerance = pressure_tolerance(form, s.id, j) if index.steps else [0.0] * n_t
            sched.caes[(s.id, j)] = CaesSeries(modes, pc, pd, ms, Ts if has_T else None, ps, tolerance)
    return sched


def audit(schedule: Schedule, case, scen) -> dict[str, float]:
    """Worst nodal-balance residual and worst reserve shortfall, recomputed from the schedule alone."""
    worst_bal, worst_res = 0.0, 0.0
    n_j = schedule.n_scenarios
    for t in range(1, schedule.n_periods + 1):
        hour = (t - 1) // schedule.steps_per_hour + 1
        for j in range(1, n_j + 1):
            inj = {b: 0.0 for b in case.bus_ids}
            for g in case.generators:
                inj[g.bus] += schedule.dispatch[(t, g.id, j)]
            for wf in case.wind:
                inj[wf.bus] += schedule.wind[(t, wf.id, j)]
            for b in case.bus_ids:
                inj[b] += schedule.load_shed[(t, b, j)]
            for s in case.caes:
                ser = schedule.caes.get((s.id, j))
                if ser is not None:
                    inj[s.bus] += ser.p_dch[t - 1] - ser.p_ch[t - 1]
            for ln in case.lines:
                f = schedule.flows.get((t, ln.id, j), 0.0)
                inj[ln.from_bus] -= f
                inj[ln.to_bus] += f
            for b in case.bus_ids:
                worst_bal = max(worst_bal, abs(inj[b] - case.share(b) * schedule.load[(t, j)]))
            cap = sum(schedule.commitment[(hour, g.id)] * g.p_max for g in case.generators)
            cap += sum(schedule.wind[(t, wf.id, j)] for wf in case.wind)
            for s in case.caes:
                ser = schedule.caes.get((s.id, j))
                if ser is not None and ser.modes[t - 1] == DISCHARGE:
                    cap += s.params.pdch_max
            need = schedule.load[(t, j)] + scen.reserve_at(case, t - 1)
            worst_res = max(worst_res, need - cap)
    return {"balance": worst_bal, "reserve_shortfall": worst_res}


@dataclass
class CavernCheck:
    unit: int
    scenario: int
    mean_rel_p: float
    max_rel_p: float
    mean_rel_T: float | None
    max_rel_T: float | None
    max_mass_dev: float
    sim_p: list[float]
    sim_T: list[float]
    sim_m: list[float]
    p_min_sim: float
    p_max_sim: float
    violations: list[int]                # steps whose simulated pressure leaves the window beyond tolerance
    warnings: list[int]                  # outside the window but within tolerance

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class VerificationReport:
    checks: list[CavernCheck]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def mean_rel_p(self) -> float:
        return float(np.mean([c.mean_rel_p for c in self.checks])) if self.checks else 0.0

    def text(self) -> str:
        lines = ["unit scenario mean_rel_p max_rel_p mean_rel_T max_rel_T p_min_sim p_max_sim violations warnings"]
        for c in self.checks:
            fmt_T = lambda v: "n/a" if v is None else f"{100 * v:.4f}%"
            lines.append(f"{c.unit} {c.scenario} {100 * c.mean_rel_p:.4f}% {100 * c.max_rel_p:.4f}% "
                         f"{fmt_T(c.mean_rel_T)} {fmt_T(c.max_rel_T)} {c.p_min_sim:.4f} {c.p_max_sim:.4f} "
                         f"{len(c.violations)} {len(c.warnings)}")
        lines.append("status " + ("ok" if self.ok else "pressure window violated"))
        return "\n".join(lines) + "\n"


def verify_cavern(schedule: Schedule, case) -> VerificationReport:
    """Replay each unit's decoded power schedule through the cavern simulator.

    Relative errors are ``|milp - sim| / sim`` averaged over steps 1..n.
    The schedule is only read.
    """
    checks = []
    units = {s.id: s for s in case.caes}
    for (uid, j), ser in sorted(schedule.caes.items()):
        unit = units[uid]
        P = unit.params
        plan = list(zip(ser.modes, ser.p_ch, ser.p_dch))
        try:
            traj = simulate(plan, CavernState(unit.initial.m, unit.initial.T, unit.initial.p), P)
        except CavernError as exc:
            raise VerificationError(f"unit {uid} scenario {j}: {exc}") from exc
        sim = traj.states[1:]
        sp = np.array([s.p for s in sim])
        sT = np.array([s.T for s in sim])
        sm = np.array([s.m for s in sim])
        rel_p = np.abs(np.array(ser.p) - sp) / sp
        if ser.T is not None:
            rel_T = np.abs(np.array(ser.T) - sT) / sT
            mean_T, max_T = float(rel_T.mean()), float(rel_T.max())
        else:
            mean_T = max_T = None
        viol, warn = [], []
        for t, (p, tol) in enumerate(zip(sp, ser.p_tolerance), start=1):
            if p < P.p_min - tol or p > P.p_max + tol:
                viol.append(t)
            elif p < P.p_min or p > P.p_max:
                warn.append(t)
        checks.append(CavernCheck(uid, j, float(rel_p.mean()), float(rel_p.max()), mean_T, max_T,
                                  float(np.max(np.abs(np.array(ser.m) - sm))), sp.tolist(), sT.tolist(),
                                  sm.tolist(), float(sp.min()), float(sp.max()), viol, warn))
    return VerificationReport(checks)


@dataclass
class KpiSummary:
    label: str
    case_name: str
    status: str
    total_cost: float
    wind_shed_mwh: float
    load_shed_mwh: float
    startups: int
    shutdowns: int
    per_scenario: dict = field(default_factory=dict)    # j -> {"wind_shed_mwh", "load_shed_mwh", "thermal_mwh"}
    p_min: float | None = None
    p_max: float | None = None
    mean_rel_p_err: float | None = None
    mean_rel_T_err: float | None = None
    solve_time: float = 0.0
    nodes: int = 0
    variables: int = 0
    binaries: int = 0
    constraints: int = 0
    gap: float = 0.0


def kpis(schedule: Schedule, report: VerificationReport | None = None, stats: dict | None = None,
         solve_time: float = 0.0, nodes: int = 0, gap: float = 0.0) -> KpiSummary:
    dh = schedule.hours_per_step
    n_t, n_j = schedule.n_periods, schedule.n_scenarios
    psi = schedule.psi
    per = {}
    wind_total = shed_total = 0.0
    for j in range(1, n_j + 1):
        ws = sum(max(0.0, schedule.wind_max[k] - schedule.wind[k]) for k in schedule.wind if k[2] == j) * dh
        ls = sum(v for k, v in schedule.load_shed.items() if k[2] == j) * dh
        th = sum(v for k, v in schedule.dispatch.items() if k[2] == j) * dh
        per[j] = {"wind_shed_mwh": ws, "load_shed_mwh": ls, "thermal_mwh": th}
    for (t, farm, j), w in schedule.wind.items():
        wind_total += psi[(t, j)] * max(0.0, schedule.wind_max[(t, farm, j)] - w) * dh
    for (t, b, j), v in schedule.load_shed.items():
        shed_total += psi[(t, j)] * v * dh
    s = KpiSummary(schedule.label, schedule.case_name, schedule.status, schedule.objective, wind_total,
                   shed_total, sum(schedule.startups.values()), sum(schedule.shutdowns.values()), per,
                   solve_time=solve_time, nodes=nodes, gap=gap)
    if schedule.caes:
        s.p_min = min(min(ser.p) for ser in schedule.caes.values())
        s.p_max = max(max(ser.p) for ser in schedule.caes.values())
    if report is not None and report.checks:
        s.mean_rel_p_err = report.mean_rel_p
        Ts = [c.mean_rel_T for c in report.checks if c.mean_rel_T is not None]
        s.mean_rel_T_err = float(np.mean(Ts)) if Ts else None
        s.p_min = min(c.p_min_sim for c in report.checks)
        s.p_max = max(c.p_max_sim for c in report.checks)
    if stats:
        s.variables, s.binaries, s.constraints = stats["variables"], stats["binaries"], stats["constraints"]
    return s


KPI_COLUMNS = ("label", "status", "total_cost", "wind_shed_mwh", "load_shed_mwh", "startups", "shutdowns",
               "p_min", "p_max", "mean_rel_p_err", "mean_rel_T_err", "solve_time", "nodes",
               "variables", "binaries", "constraints", "gap")
CLOCK_COLUMNS = ("solve_time",)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def kpi_csv(runs: list[KpiSummary], times: bool = True) -> str:
    """KPI table; ``times=False`` drops wall-clock columns so reruns are byte-identical."""
    cols = [c for c in KPI_COLUMNS if times or c not in CLOCK_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in runs:
        w.writerow([_cell(getattr(r, c)) for c in cols])
    return buf.getvalue()


def compare_runs(runs: list[KpiSummary], times: bool = True) -> tuple[str, str]:
    """Aligned text table and CSV of each run against the first one."""
    if len(runs) < 2:
        raise ValueError("need at least two runs to compare")
    names = {r.case_name for r in runs}
    if len(names) != 1:
        raise ValueError(f"runs come from different cases: {sorted(names)}")
    base = runs[0]
    cols = ["label", "cost", "d_cost", "wind_shed", "d_wind_shed", "time_s", "nodes", "binaries", "rows"]
    rows = []
    for r in runs:
        rows.append([r.label, r.total_cost, r.total_cost - base.total_cost, r.wind_shed_mwh,
                     r.wind_shed_mwh - base.wind_shed_mwh, r.solve_time, r.nodes, r.binaries, r.constraints])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keep = [i for i, c in enumerate(cols) if times or c != "time_s"]
    w.writerow([cols[i] for i in keep])
    for row in rows:
        w.writerow([_cell(row[i]) for i in keep])
    width = max(len(r.label) for r in runs) + 2
    text = [f"{'run':<{width}}{'cost':>14}{'d_cost':>12}{'wind_shed':>11}{'d_shed':>10}"
            f"{'time_s':>9}{'nodes':>8}{'binaries':>10}{'rows':>8}"]
    for row in rows:
        text.append(f"{row[0]:<{width}}{row[1]:>14.2f}{row[2]:>12.2f}{row[3]:>11.2f}{row[4]:>10.2f}"
                    f"{row[5]:>9.2f}{row[6]:>8d}{row[7]:>10d}{row[8]:>8d}")
    return "\n".join(text) + "\n", buf.getvalue()


SERIES_COLUMNS = ("t", "hour", "scenario", "load_mw", "wind_max_mw", "wind_mw", "wind_shed_mw",
                  "load_shed_mw", "thermal_mw", "caes_unit", "mode", "p_ch_mw", "p_dch_mw",
                  "m_milp_kg", "T_milp_K", "p_milp_bar", "m_sim_kg", "T_sim_K", "p_sim_bar")


def timeseries_csv(schedule: Schedule, report: VerificationReport | None = None) -> str:
    """One row per (step, scenario, CAES unit); CAES columns are blank without storage."""
    checks = {(c.unit, c.scenario): c for c in report.checks} if report else {}
    units = sorted({u for u, _ in schedule.caes}) or [None]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for j in range(1, schedule.n_scenarios + 1):
        for t in range(1, schedule.n_periods + 1):
            wmax = sum(v for k, v in schedule.wind_max.items() if k[0] == t and k[2] == j)
            wind = sum(v for k, v in schedule.wind.items() if k[0] == t and k[2] == j)
            shed = sum(v for k, v in schedule.load_shed.items() if k[0] == t and k[2] == j)
            thermal = sum(v for k, v in schedule.dispatch.items() if k[0] == t and k[2] == j)
            hour = (t - 1) // schedule.steps_per_hour + 1
            base = [t, hour, j, schedule.load[(t, j)], wmax, wind, wmax - wind, shed, thermal]
            for u in units:
                if u is None:
                    w.writerow([_cell(v) for v in base] + [""] * 10)
                    continue
                ser = schedule.caes[(u, j)]
                chk = checks.get((u, j))
                sim = [chk.sim_m[t - 1], chk.sim_T[t - 1], chk.sim_p[t - 1]] if chk else [None] * 3
                T_milp = ser.T[t - 1] if ser.T is not None else None
                w.writerow([_cell(v) for v in base + [u, ser.modes[t - 1], ser.p_ch[t - 1], ser.p_dch[t - 1],
                                                       ser.m[t - 1], T_milp, ser.p[t - 1]] + sim])
    return buf.getvalue()
