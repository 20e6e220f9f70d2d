"""Assembly of the stochastic UC + CAES MILP.

Indices in variable names are 1-based: ``t`` is a fine step (or an hour for
the hourly families u, v, w), ``i`` an injection id (generator, wind farm or
CAES unit), ``b`` a bus, ``l`` a line and ``j`` a scenario. Step ``t`` moves
the cavern from boundary ``t-1`` to boundary ``t``; boundary 0 is the fixed
initial state shared by all scenarios.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .case import GridCase, ScenarioSet
from .cavern import (CHARGE, DISCHARGE, IDLE, CavernError, CavernParams, ProcessEquation,
                     derive_coefficients, process_equations)
from .linearize import (BoundsBox, ProductLink, linearize_product, mccormick_binary_p,
                        mccormick_binary_T)
from .milp import BINARY, CONTINUOUS, EQ, GE, LE, MilpModel, SolutionVector

MODES = ("model2", "model1", "const-temp", "no-caes")

PRI_UNIT, PRI_MODE, PRI_SEGMENT = 3, 2, 0


class FormulationError(ValueError):
    pass


@dataclass(frozen=True)
class FormulationOptions:
    apply_eq26_reduction: bool = True
    use_idle_binary_elimination: bool = True
    constant_temperature_mode: bool = False
    include_caes: bool = True
    segments_plus: int = 16
    segments_minus: int = 16
    t_switch: int | None = None         # fine steps; None uses each unit's own setting
    mip_gap: float = 1e-3
    normalize_products: bool = True
    state_margin: float = 0.05          # widening of process-output boxes

    def __post_init__(self):
        if self.segments_plus < 1 or self.segments_minus < 1:
            raise FormulationError("segment counts must be positive")
        if self.t_switch is not None and self.t_switch < 0:
            raise FormulationError("t_switch must be non-negative")
        if self.constant_temperature_mode and not self.include_caes:
            raise FormulationError("constant-temperature mode needs CAES units")

    @classmethod
    def for_mode(cls, mode: str, **kw) -> "FormulationOptions":
        if mode == "model2":
            return cls(**kw)
        if mode == "model1":
            return cls(apply_eq26_reduction=False, use_idle_binary_elimination=False, **kw)
        if mode == "const-temp":
            return cls(constant_temperature_mode=True, **kw)
        if mode == "no-caes":
            return cls(include_caes=False, **kw)
        raise FormulationError(f"unknown mode {mode!r}; expected one of {MODES}")


def vname(family: str, t: int, i=None, j=None, extra: str = "") -> str:
    parts = [family, f"t{t}"]
    if i is not None:
        parts.append(i if isinstance(i, str) else f"i{i}")
    if j is not None:
        parts.append(f"j{j}")
    if extra:
        parts.append(extra)
    return "_".join(parts)


@dataclass
class CavernStep:
    """Resolved cavern equations of one (step, unit, scenario)."""

    t: int
    unit: int
    j: int
    prev: dict                           # "m"/"T"/"p" -> handle or constant
    flows: dict                          # mode -> mdot handle (None for idle)
    nexts: dict                          # (mode, "T"/"p") -> handle
    state: dict                          # "m"/"T"/"p" -> handle at boundary t
    equations: dict = field(default_factory=dict)   # (mode, target) -> (bilinear, linear, constant)
    links: list = field(default_factory=list)


@dataclass
class VariableIndex:
    n_periods: int
    n_hours: int
    steps_per_hour: int
    n_scenarios: int
    families: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)       # (t, unit, j) -> CavernStep
    links: list = field(default_factory=list)

    def add(self, family: str, key: tuple, handle: int) -> int:
        fam = self.families.setdefault(family, {})
        if key in fam:
            raise FormulationError(f"duplicate index entry {family}{key}")
        fam[key] = handle
        return handle

    def get(self, family: str, *key) -> int:
        return self.families[family][key]

    def find(self, family: str, *key):
        return self.families.get(family, {}).get(key)

    def handles(self, family: str) -> list[int]:
        return list(self.families.get(family, {}).values())

    def hour(self, t: int) -> int:
        return (t - 1) // self.steps_per_hour + 1

    def audit(self, case: GridCase, options: FormulationOptions) -> list[str]:
        """Check that every in-scope symbol family is present and total over its index range."""
        T, H, J = range(1, self.n_periods + 1), range(1, self.n_hours + 1), range(1, self.n_scenarios + 1)
        gens = [g.id for g in case.generators]
        expect = {
            "u": list(itertools.product(H, gens)), "v": list(itertools.product(H, gens)),
            "w": list(itertools.product(H, gens)),
            "P": list(itertools.product(T, gens, J)),
            "W": list(itertools.product(T, [w.id for w in case.wind], J)),
            "ls": list(itertools.product(T, case.bus_ids, J)),
            "dup": list(itertools.product(range(1, self.n_periods), gens)),
            "ddn": list(itertools.product(range(1, self.n_periods), gens)),
        }
        if case.lines:
            expect["f"] = list(itertools.product(T, [ln.id for ln in case.lines], J))
            expect["theta"] = list(itertools.product(T, case.bus_ids, J))
        units = [s.id for s in case.caes] if options.include_caes else []
        if units:
            tsj = list(itertools.product(T, units, J))
            for fam in ("alpha", "beta", "Pch", "Pdch", "mdin", "mdout", "ms", "ps"):
                expect[fam] = tsj
            if not options.use_idle_binary_elimination:
                expect["gamma"] = tsj
            if not options.constant_temperature_mode:
                for fam in ("Ts", "Tsch", "Tsdch", "Tsidl", "psch", "psdch", "psidl"):
                    expect[fam] = tsj
        problems = []
        for fam, keys in expect.items():
            have = self.families.get(fam, {})
            missing = [k for k in keys if k not in have]
            if missing:
                problems.append(f"{fam}: {len(missing)} missing entries, e.g. {missing[0]}")
            extra = set(have) - set(keys)
            if extra:
                problems.append(f"{fam}: {len(extra)} unexpected entries")
        return problems


@dataclass
class Formulation:
    model: MilpModel
    index: VariableIndex
    case: GridCase
    scenarios: ScenarioSet
    options: FormulationOptions

    def statistics(self) -> dict:
        return self.model.stats()

    def statistics_report(self) -> str:
        return format_statistics(self.model.stats(), self.model.name)


def format_statistics(stats: dict, title: str = "model") -> str:
    lines = [f"model {title}",
             f"variables {stats['variables']}  binaries {stats['binaries']}  "
             f"constraints {stats['constraints']}  nonzeros {stats['nonzeros']}",
             f"{'family':<10}{'vars':>8}{'binaries':>10}{'rows':>8}{'nonzeros':>10}"]
    for fam in sorted(stats["families"]):
        f = stats["families"][fam]
        lines.append(f"{fam:<10}{f.get('variables', 0):>8}{f.get('binaries', 0):>10}"
                     f"{f.get('constraints', 0):>8}{f.get('nonzeros', 0):>10}")
    return "\n".join(lines) + "\n"


# -- UC core --------------------------------------------------------------------------

def build_uc_core(case: GridCase, scen: ScenarioSet, model: MilpModel, index: VariableIndex) -> None:
    """Generators, wind, network, reserve and the four cost groups of the objective.

    CAES power and mode variables, when present in ``index``, are picked up
    for the nodal balance, the reserve requirement and the cost terms, so
    :func:`build_caes_logic` must run first for a model with storage.
    """
    n_t, n_j, sph = scen.n_periods, scen.n_scenarios, case.steps_per_hour
    H = n_t // sph
    dh = 1.0 / sph
    costs = scen.costs
    obj: dict[int, float] = {}
    const = 0.0

    def cost(h, c):
        if c:
            obj[h] = obj.get(h, 0.0) + c

    for g in case.generators:
        prev_u = 1.0 if g.initial_on else 0.0
        for h in range(1, H + 1):
            u = index.add("u", (h, g.id), model.add_variable(vname("u", h, g.id), BINARY, priority=PRI_UNIT))
            v = index.add("v", (h, g.id), model.add_variable(vname("v", h, g.id), BINARY, priority=PRI_UNIT))
            w = index.add("w", (h, g.id), model.add_variable(vname("w", h, g.id), BINARY, priority=PRI_UNIT))
            cost(v, g.startup_cost)
            cost(w, g.shutdown_cost)
            if h == 1:
                model.add_constraint(vname("logic", h, g.id), {v: 1, w: -1, u: -1}, EQ, -prev_u)
            else:
                model.add_constraint(vname("logic", h, g.id),
                                     {v: 1, w: -1, u: -1, index.get("u", h - 1, g.id): 1}, EQ, 0.0)
            model.add_constraint(vname("vw", h, g.id), {v: 1, w: 1}, LE, 1.0)
        # rolling-window minimum up and down times; history before hour 1 is not tracked
        for h in range(1, H + 1):
            u = index.get("u", h, g.id)
            if g.min_up > 1:
                row = {index.get("v", k, g.id): 1.0 for k in range(max(1, h - g.min_up + 1), h + 1)}
                row[u] = row.get(u, 0.0) - 1.0
                model.add_constraint(vname("minup", h, g.id), row, LE, 0.0)
            if g.min_down > 1:
                row = {index.get("w", k, g.id): 1.0 for k in range(max(1, h - g.min_down + 1), h + 1)}
                row[u] = row.get(u, 0.0) + 1.0
                model.add_constraint(vname("mindn", h, g.id), row, LE, 1.0)

    for t in range(1, n_t + 1):
        h = index.hour(t)
        for j in range(1, n_j + 1):
            psi = scen.psi(t - 1, j - 1)
            for g in case.generators:
                P = index.add("P", (t, g.id, j), model.add_variable(vname("P", t, g.id, j), ub=g.p_max))
                u = index.get("u", h, g.id)
                model.add_constraint(vname("Pmin", t, g.id, j), {P: 1, u: -g.p_min}, GE, 0.0)
                model.add_constraint(vname("Pmax", t, g.id, j), {P: 1, u: -g.p_max}, LE, 0.0)
                cost(P, psi * dh * (g.cost_a - costs.reserve))
                cost(u, psi * dh * (g.cost_b + costs.reserve * g.p_max))
            for wf in case.wind:
                wmax = scen.wind_max(wf, t - 1, j - 1)
                W = index.add("W", (t, wf.id, j), model.add_variable(vname("W", t, wf.id, j), ub=wmax))
                cost(W, -psi * dh * costs.wind_shed)
                const += psi * dh * costs.wind_shed * wmax
            for b in case.bus_ids:
                d = case.share(b) * scen.load[j - 1][t - 1]
                ls = index.add("ls", (t, b, j), model.add_variable(vname("ls", t, f"b{b}", j), ub=d))
                cost(ls, psi * dh * costs.load_shed)
            for s in case.caes:
                pch, pdch = index.find("Pch", t, s.id, j), index.find("Pdch", t, s.id, j)
                beta = index.find("beta", t, s.id, j)
                if pch is None:
                    continue
                cost(pch, psi * dh * costs.charge)
                cost(pdch, psi * dh * (costs.discharge - costs.reserve))
                cost(beta, psi * dh * costs.reserve * s.params.pdch_max)

    if case.lines:
        ref = case.bus_ids[0]
        for t in range(1, n_t + 1):
            for j in range(1, n_j + 1):
                for b in case.bus_ids:
                    lim = 0.0 if b == ref else math.pi
                    index.add("theta", (t, b, j),
                              model.add_variable(vname("theta", t, f"b{b}", j), lb=-lim, ub=lim))
                for ln in case.lines:
                    f = index.add("f", (t, ln.id, j), model.add_variable(
                        vname("f", t, f"l{ln.id}", j), lb=-ln.capacity, ub=ln.capacity))
                    model.add_constraint(vname("flow", t, f"l{ln.id}", j), {
                        f: 1.0, index.get("theta", t, ln.from_bus, j): -ln.susceptance,
                        index.get("theta", t, ln.to_bus, j): ln.susceptance}, EQ, 0.0)

    M = case.incidence()
    for t in range(1, n_t + 1):
        h = index.hour(t)
        for j in range(1, n_j + 1):
            for bi, b in enumerate(case.bus_ids):
                row: dict[int, float] = {}
                for li, ln in enumerate(case.lines):
                    if M[bi, li]:
                        row[index.get("f", t, ln.id, j)] = M[bi, li]
                for g in case.generators:
                    if g.bus == b:
                        row[index.get("P", t, g.id, j)] = 1.0
                for wf in case.wind:
                    if wf.bus == b:
                        row[index.get("W", t, wf.id, j)] = 1.0
                row[index.get("ls", t, b, j)] = 1.0
                for s in case.caes:
                    if s.bus == b and index.find("Pch", t, s.id, j) is not None:
                        row[index.get("Pdch", t, s.id, j)] = 1.0
                        row[index.get("Pch", t, s.id, j)] = -1.0
                d = case.share(b) * scen.load[j - 1][t - 1]
                model.add_constraint(vname("bal", t, f"b{b}", j), row, EQ, d)
            row = {index.get("u", h, g.id): g.p_max for g in case.generators}
            for wf in case.wind:
                row[index.get("W", t, wf.id, j)] = 1.0
            for s in case.caes:
                beta = index.find("beta", t, s.id, j)
                if beta is not None:
                    row[beta] = s.params.pdch_max
            rhs = scen.load[j - 1][t - 1] + scen.reserve_at(case, t - 1)
            model.add_constraint(vname("res", t, None, j), row, GE, rhs)

    # load-following ramp reserves between consecutive fine steps, all scenario pairs
    for g in case.generators:
        for t in range(1, n_t):
            up = index.add("dup", (t, g.id), model.add_variable(vname("dup", t, g.id), ub=g.ramp_up))
            dn = index.add("ddn", (t, g.id), model.add_variable(vname("ddn", t, g.id), ub=g.ramp_down))
            cost(up, g.ramp_up_cost)
            cost(dn, g.ramp_down_cost)
            for j1, j2 in itertools.product(range(1, n_j + 1), repeat=2):
                a, b = index.get("P", t, g.id, j1), index.get("P", t + 1, g.id, j2)
                model.add_constraint(vname("rup", t, g.id, j1, f"k{j2}"), {b: 1, a: -1, up: -1}, LE, 0.0)
                model.add_constraint(vname("rdn", t, g.id, j1, f"k{j2}"), {a: 1, b: -1, dn: -1}, LE, 0.0)

    model.add_objective(obj, const)


# -- CAES ----------------------------------------------------------------------------

def mass_box(params: CavernParams, m0: float, t: int) -> tuple[float, float]:
    """Masses reachable at boundary ``t`` from ``m0`` at full charge or discharge."""
    lo = m0 - t * params.dt * params.c_aout * params.pdch_max
    hi = m0 + t * params.dt * params.c_ain * params.pch_max
    return max(lo, 1e-3 * m0), hi


def build_caes_logic(case: GridCase, scen: ScenarioSet, model: MilpModel, index: VariableIndex,
                     options: FormulationOptions) -> None:
    """Flows, the pressure window, mode exclusivity, power bounds, idle logic and mass balance."""
    n_t, n_j = scen.n_periods, scen.n_scenarios
    for s in case.caes:
        P = s.params
        if not (P.pch_min > 0 and P.pdch_min > 0):
            raise FormulationError(f"caes {s.id}: idle logic needs positive minimum charge and discharge power")
        pmin = min(P.pch_min, P.pdch_min)
        for j in range(1, n_j + 1):
            for t in range(1, n_t + 1):
                key = (t, s.id, j)

                def var(fam, kind=CONTINUOUS, lb=0.0, ub=None, priority=0):
                    return index.add(fam, key, model.add_variable(vname(fam, t, s.id, j), kind, lb, ub, priority))

                a = var("alpha", BINARY, priority=PRI_MODE)
                b = var("beta", BINARY, priority=PRI_MODE)
                pch = var("Pch", ub=P.pch_max)
                pdch = var("Pdch", ub=P.pdch_max)
                mi = var("mdin", ub=P.c_ain * P.pch_max)
                mo = var("mdout", ub=P.c_aout * P.pdch_max)
                m_lo, m_hi = mass_box(P, s.initial.m, t)
                ms = var("ms", lb=m_lo, ub=m_hi)
                var("ps", lb=P.p_min, ub=P.p_max)
                nm = lambda fam: vname(fam, t, s.id, j)
                model.add_constraint(nm("flowin"), {mi: 1, pch: -P.c_ain}, EQ, 0.0)
                model.add_constraint(nm("flowout"), {mo: 1, pdch: -P.c_aout}, EQ, 0.0)
                if options.use_idle_binary_elimination:
                    model.add_constraint(nm("excl"), {a: 1, b: 1}, LE, 1.0)
                    model.add_constraint(nm("idle"), {pch: 1, pdch: 1, a: -pmin, b: -pmin}, GE, 0.0)
                else:
                    gmm = var("gamma", BINARY, priority=PRI_MODE)
                    model.add_constraint(nm("excl"), {a: 1, b: 1, gmm: 1}, EQ, 1.0)
                    model.add_constraint(nm("idle"), {pch: 1, pdch: 1, gmm: pmin}, GE, pmin)
                model.add_constraint(nm("chlo"), {pch: 1, a: -P.pch_min}, GE, 0.0)
                model.add_constraint(nm("chhi"), {pch: 1, a: -P.pch_max}, LE, 0.0)
                model.add_constraint(nm("dchlo"), {pdch: 1, b: -P.pdch_min}, GE, 0.0)
                model.add_constraint(nm("dchhi"), {pdch: 1, b: -P.pdch_max}, LE, 0.0)
                prev = index.find("ms", t - 1, s.id, j)
                row = {ms: 1.0}
                rhs = 0.0
                if prev is None:
                    rhs = s.initial.m
                else:
                    row[prev] = -1.0
                if options.apply_eq26_reduction:
                    row[mi] = -P.dt
                    row[mo] = P.dt
                else:
                    ain = mccormick_binary_T(model, a, mi, name=nm("Ain"))
                    bout = mccormick_binary_T(model, b, mo, name=nm("Bout"))
                    index.add("Ain", key, ain)
                    index.add("Bout", key, bout)
                    row[ain] = -P.dt
                    row[bout] = P.dt
                model.add_constraint(nm("mass"), row, EQ, rhs)


def build_switch_time(case: GridCase, scen: ScenarioSet, model: MilpModel, index: VariableIndex,
                      t_switch: int | None = None) -> int:
    """Forbid charge/discharge reversals within ``t_switch`` fine steps; returns rows added."""
    added = 0
    for s in case.caes:
        ts = s.params.t_switch if t_switch is None else t_switch
        if ts < 0:
            raise FormulationError("t_switch must be non-negative")
        for j in range(1, scen.n_scenarios + 1):
            for t in range(1, scen.n_periods + 1):
                for lag in range(1, ts + 1):
                    if t + lag > scen.n_periods:
                        break
                    a0, b0 = index.get("alpha", t, s.id, j), index.get("beta", t, s.id, j)
                    a1, b1 = index.get("alpha", t + lag, s.id, j), index.get("beta", t + lag, s.id, j)
                    model.add_constraint(vname("swab", t, s.id, j, f"k{lag}"), {a0: 1, b1: 1}, LE, 1.0)
                    model.add_constraint(vname("swba", t, s.id, j, f"k{lag}"), {b0: 1, a1: 1}, LE, 1.0)
                    added += 2
    return added


def build_constant_temperature(case: GridCase, scen: ScenarioSet, model: MilpModel,
                               index: VariableIndex) -> None:
    """Pressure as an affine function of mass at the fixed temperature T_con."""
    for s in case.caes:
        P = s.params
        k = P.gas_constant * P.T_con / P.volume
        for j in range(1, scen.n_scenarios + 1):
            for t in range(1, scen.n_periods + 1):
                model.add_constraint(vname("ctemp", t, s.id, j), {
                    index.get("ps", t, s.id, j): 1.0, index.get("ms", t, s.id, j): -k}, EQ, 0.0)


def _widen(lo, hi, margin):
    pad = margin * max(hi - lo, 1e-9 * max(1.0, abs(hi)))
    return lo - pad, hi + pad


def next_boxes(params: CavernParams, coeffs, m_box, T_box, p_box, margin: float) -> dict:
    """Bounds for the six process outputs, sampled over the input box and widened."""
    grid = lambda lo, hi: sorted({lo, 0.5 * (lo + hi), hi})
    out = {}
    for mode in (CHARGE, DISCHARGE, IDLE):
        temp, pres = process_equations(mode, coeffs, params)
        fmax = {CHARGE: params.c_ain * params.pch_max, DISCHARGE: params.c_aout * params.pdch_max,
                IDLE: 0.0}[mode]
        for eq, window in ((temp, (params.T_min, params.T_max)), (pres, (params.p_min, params.p_max))):
            vals = []
            for m, T, p, f in itertools.product(grid(*m_box), grid(*T_box), grid(*p_box), grid(0.0, fmax)):
                try:
                    vals.append(eq.solve_next({"m": m, "T": T, "p": p, "mdot": f}))
                except CavernError:
                    continue
            lo, hi = min(vals + [window[0]]), max(vals + [window[1]])
            lo, hi = _widen(lo, hi, margin)
            if eq.target == "p":
                lo = max(lo, 0.0)
            out[(mode, eq.target)] = (lo, hi)
    return out


def build_cavern_dynamics(case: GridCase, scen: ScenarioSet, model: MilpModel, index: VariableIndex,
                          options: FormulationOptions) -> None:
    """Process equations with linearized products and the mode selection rows."""
    n_t, n_j = scen.n_periods, scen.n_scenarios
    tags = {CHARGE: "ch", DISCHARGE: "dch", IDLE: "idl"}
    for s in case.caes:
        P = s.params
        coeffs = derive_coefficients(P)
        eqs = {mode: process_equations(mode, coeffs, P) for mode in (CHARGE, DISCHARGE, IDLE)}
        for j in range(1, n_j + 1):
            for t in range(1, n_t + 1):
                key = (t, s.id, j)
                nm = lambda fam, extra="": vname(fam, t, s.id, j, extra)
                if t == 1:
                    prev = {"m": float(s.initial.m), "T": float(s.initial.T), "p": float(s.initial.p)}
                    m_box = (s.initial.m,) * 2
                    T_box = (s.initial.T,) * 2
                    p_box = (s.initial.p,) * 2
                else:
                    prev = {"m": index.get("ms", t - 1, s.id, j), "T": index.get("Ts", t - 1, s.id, j),
                            "p": index.get("ps", t - 1, s.id, j)}
                    m_box = mass_box(P, s.initial.m, t - 1)
                    T_box = (P.T_min, P.T_max)
                    p_box = (P.p_min, P.p_max)
                boxes = next_boxes(P, coeffs, m_box, T_box, p_box, options.state_margin)
                Ts = index.add("Ts", key, model.add_variable(nm("Ts"), lb=P.T_min, ub=P.T_max))
                nexts = {}
                for mode in (CHARGE, DISCHARGE, IDLE):
                    for target in ("T", "p"):
                        fam = ("Ts" if target == "T" else "ps") + tags[mode]
                        lo, hi = boxes[(mode, target)]
                        nexts[(mode, target)] = index.add(fam, key, model.add_variable(nm(fam), lb=lo, ub=hi))
                flows = {CHARGE: index.get("mdin", *key), DISCHARGE: index.get("mdout", *key), IDLE: None}
                state = {"m": index.get("ms", *key), "T": Ts, "p": index.get("ps", *key)}
                step = CavernStep(t, s.id, j, prev, flows, nexts, state)
                products: dict[tuple[int, int], int] = {}
                unit_of: dict[int, float] = {}

                def product(ha, hb):
                    k = (min(ha, hb), max(ha, hb))
                    if k not in products:
                        na, nb = model.variables[k[0]].name.split("_")[0], model.variables[k[1]].name.split("_")[0]
                        links: list[ProductLink] = []
                        products[k] = linearize_product(
                            model, k[0], k[1], n_plus=options.segments_plus, n_minus=options.segments_minus,
                            name=nm("pw", f"{na}X{nb}"), normalize=options.normalize_products,
                            registry=links, priority=PRI_SEGMENT, unit="auto")
                        unit_of[products[k]] = links[0].unit
                        step.links.extend(links)
                        index.links.extend(links)
                    return products[k]

                for mode in (CHARGE, DISCHARGE, IDLE):
                    for eq in eqs[mode]:
                        refs = dict(prev)
                        refs["mdot"] = flows[mode]
                        refs["next"] = nexts[(mode, eq.target)]
                        row: dict[int, float] = {}
                        constant = eq.constant
                        bil, lin = [], []
                        for c, a, b in eq.bilinear:
                            ra, rb = refs[a], refs[b]
                            if ra is None or rb is None:
                                continue            # idle has no flow
                            if isinstance(ra, int) and isinstance(rb, int):
                                w = product(ra, rb)
                                row[w] = row.get(w, 0.0) + c * unit_of[w]
                                bil.append((c, ra, rb, w))
                            elif isinstance(ra, int) or isinstance(rb, int):
                                h, val = (ra, rb) if isinstance(ra, int) else (rb, ra)
                                row[h] = row.get(h, 0.0) + c * val
                                lin.append((c * val, h))
                            else:
                                constant += c * ra * rb
                        for c, a in eq.linear:
                            r = refs[a]
                            if isinstance(r, int):
                                row[r] = row.get(r, 0.0) + c
                                lin.append((c, r))
                            elif r is not None:
                                constant += c * r
                        top = max(abs(v) for v in row.values())
                        model.add_constraint(nm(f"{eq.target}eq{tags[mode]}"),
                                             {h: v / top for h, v in row.items()}, EQ, -constant / top)
                        step.equations[(mode, eq.target)] = (tuple(bil), tuple(lin), constant)

                alpha, beta = index.get("alpha", *key), index.get("beta", *key)
                gamma = index.find("gamma", *key)
                for target, sel in (("T", Ts), ("p", state["p"])):
                    mc = mccormick_binary_T if target == "T" else mccormick_binary_p
                    fam = "Q" if target == "T" else "S"
                    xch, xdch, xidl = (nexts[(mode, target)] for mode in (CHARGE, DISCHARGE, IDLE))
                    row = {sel: 1.0}
                    terms = [(alpha, xch, "ch", -1.0), (beta, xdch, "dch", -1.0)]
                    if gamma is None:
                        row[xidl] = -1.0
                        terms += [(alpha, xidl, "chidl", 1.0), (beta, xidl, "dchidl", 1.0)]
                    else:
                        terms.append((gamma, xidl, "idl", -1.0))
                    for bin_h, cont_h, tag, sign in terms:
                        q = mc(model, bin_h, cont_h, name=nm(fam, tag))
                        index.add(fam, key + (tag,), q)
                        row[q] = row.get(q, 0.0) + sign
                    model.add_constraint(nm(f"sel{target}"), row, EQ, 0.0)
                index.steps[key] = step


# -- assembly -----------------------------------------------------------------------------

def new_index(case: GridCase, scen: ScenarioSet) -> VariableIndex:
    return VariableIndex(scen.n_periods, scen.n_periods // case.steps_per_hour, case.steps_per_hour,
                         scen.n_scenarios)


def build_model(case: GridCase, scen: ScenarioSet, options: FormulationOptions | None = None,
                name: str | None = None) -> Formulation:
    options = options or FormulationOptions()
    if scen.n_periods % case.steps_per_hour:
        raise FormulationError("horizon is not a whole number of hours")
    if not options.include_caes:
        case = case.without_caes()
    label = name or ("no-caes" if not options.include_caes else
                     "const-temp" if options.constant_temperature_mode else
                     "model2" if options.apply_eq26_reduction and options.use_idle_binary_elimination
                     else "model1")
    model = MilpModel(f"{case.name}-{label}")
    index = new_index(case, scen)
    if case.caes:
        build_caes_logic(case, scen, model, index, options)
        if options.constant_temperature_mode:
            build_constant_temperature(case, scen, model, index)
        else:
            build_cavern_dynamics(case, scen, model, index, options)
        build_switch_time(case, scen, model, index, options.t_switch)
    build_uc_core(case, scen, model, index)
    model.freeze()
    return Formulation(model, index, case, scen, options)


def seed_fixings(form: Formulation) -> dict[str, float]:
    """All units on, CAES idle: the binary part of the feasibility seed."""
    out = {}
    for fam in ("u",):
        for h in form.index.handles(fam):
            out[form.model.variables[h].name] = 1.0
    for fam in ("v", "w"):
        for (hr, g), h in form.index.families.get(fam, {}).items():
            gen = next(x for x in form.case.generators if x.id == g)
            started = hr == 1 and not gen.initial_on
            out[form.model.variables[h].name] = 1.0 if (fam == "v" and started) else 0.0
    for fam, val in (("alpha", 0.0), ("beta", 0.0), ("gamma", 1.0)):
        for h in form.index.handles(fam):
            out[form.model.variables[h].name] = val
    return out


# -- warm start ---------------------------------------------------------------------------------

HINT_FAMILIES = ("u", "v", "w", "alpha", "beta")
HINT_POWERS = ("Pch", "Pdch")


def warm_start_from(source: Formulation, solution: SolutionVector,
                    target: Formulation | None = None) -> dict[str, float]:
    """Commitment and CAES-mode binaries of a solved model, keyed by variable name.

    CAES powers are carried along as continuous hints. When ``target`` carries an explicit idle binary it is filled in as
    ``1 - alpha - beta``.
    """
    if solution.status not in ("optimal", "feasible") or len(solution.values) == 0:
        raise FormulationError(f"cannot derive a warm start from a {solution.status} solution")
    hint = {}
    for fam in HINT_FAMILIES:
        for h in source.index.handles(fam):
            val = float(solution.values[h])
            if abs(val - round(val)) > 1e-6:
                raise FormulationError(f"{source.model.variables[h].name} = {val} is not binary")
            hint[source.model.variables[h].name] = float(round(val))
    for fam in HINT_POWERS:
        for h in source.index.handles(fam):
            hint[source.model.variables[h].name] = max(0.0, float(solution.values[h]))
    if target is not None and target.index.families.get("gamma"):
        for key, h in target.index.families["gamma"].items():
            a = hint.get(vname("alpha", *key))
            b = hint.get(vname("beta", *key))
            if a is not None and b is not None:
                hint[target.model.variables[h].name] = 1.0 - a - b
    return hint


def _product_value(link: ProductLink, values: dict[int, float]) -> float:
    return link.evaluate(values[link.x], values[link.y])


def _solve_next(step: CavernStep, mode: str, target: str, values: dict[int, float],
                link_of: dict[int, ProductLink], lo: float, hi: float) -> float | None:
    """Value of a process output that satisfies its piecewise row, found by bisection."""
    bil, lin, constant = step.equations[(mode, target)]
    nh = step.nexts[(mode, target)]

    def g(y):
        vals = dict(values)
        vals[nh] = y
        total = constant
        for c, ra, rb, w in bil:
            total += c * _product_value(link_of[w], vals)
        for c, r in lin:
            total += c * vals[r]
        return total

    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        return lo
    if glo * ghi > 0:
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm == 0.0 or hi - lo <= 1e-12 * max(1.0, abs(mid)):
            return mid
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def complete_warm_start(form: Formulation, hint: dict[str, float], engine: str = "highs",
                        node_limit: int = 5_000) -> tuple[dict[str, float] | None, str]:
    """Extend a mode/power hint to every binary of a piecewise model.

    Each unit and scenario is rolled forward in time on the piecewise
    surfaces using the hinted powers. A step whose active output would leave
    the pressure or temperature window is throttled to the largest power that
    keeps it inside, or idled when even minimum power does not. The mode and
    segment binaries found this way are fixed and a small commitment MIP
    picks u/v/w. Returns the assignment (or None) and a short reason.
    """
    import copy

    from .solver import BnbOptions, solve_mip

    model, index = form.model, form.index
    link_of = {lk.product: lk for lk in index.links}
    fixed: dict[int, float] = {}
    repairs = []
    units = {s.id: s for s in form.case.caes}
    for (unit, j) in sorted({(u, jj) for (_, u, jj) in index.steps}):
        P = units[unit].params
        state: dict[int, float] = {}
        for t in range(1, index.n_periods + 1):
            step = index.steps[(t, unit, j)]
            key = (t, unit, j)
            a = hint.get(vname("alpha", *key), 0.0)
            b = hint.get(vname("beta", *key), 0.0)
            mode = CHARGE if a > 0.5 else DISCHARGE if b > 0.5 else IDLE
            power = 0.0
            if mode != IDLE:
                lo_p, hi_p = (P.pch_min, P.pch_max) if mode == CHARGE else (P.pdch_min, P.pdch_max)
                power = min(hi_p, max(lo_p, hint.get(vname("Pch" if mode == CHARGE else "Pdch", *key), lo_p)))
            values = _roll(form, step, mode, power, state, link_of)
            if values is None and mode != IDLE:
                if _roll(form, step, mode, lo_p, state, link_of) is None:
                    repairs.append(f"t{t} idle")
                    mode, power = IDLE, 0.0
                else:
                    ok, bad = lo_p, power
                    for _ in range(40):
                        mid = 0.5 * (ok + bad)
                        if _roll(form, step, mode, mid, state, link_of) is None:
                            bad = mid
                        else:
                            ok = mid
                    repairs.append(f"t{t} {power:.1f}->{ok:.1f} MW")
                    power = ok
                values = _roll(form, step, mode, power, state, link_of)
            if values is None:
                return None, f"step {t} scenario {j}: cavern cannot follow even an idle interval"
            fixed[index.get("alpha", *key)] = float(mode == CHARGE)
            fixed[index.get("beta", *key)] = float(mode == DISCHARGE)
            g = index.find("gamma", *key)
            if g is not None:
                fixed[g] = float(mode == IDLE)
            fixed[index.get("Pch", *key)] = power if mode == CHARGE else 0.0
            fixed[index.get("Pdch", *key)] = power if mode == DISCHARGE else 0.0
            for link in step.links:
                fixed.update(link.binary_assignment(values[link.x], values[link.y]))
            state = {step.state[k]: values[step.state[k]] for k in ("m", "T", "p")}
    sub = copy.deepcopy(model)
    sub.frozen = False
    for h, v in fixed.items():
        sub.set_bounds(h, v, v)
    res = solve_mip(sub.freeze(), BnbOptions(gap=form.options.mip_gap, engine=engine, node_limit=node_limit))
    if res.solution.status not in ("optimal", "feasible"):
        return None, f"commitment sub-problem is {res.status}"
    out = {model.variables[h].name: float(round(res.solution.values[h])) for h in model.integer_handles}
    return out, "ok" if not repairs else "ok (repaired " + ", ".join(repairs) + ")"


def _roll(form: Formulation, step: CavernStep, mode: str, power: float, state: dict[int, float],
          link_of: dict[int, ProductLink]) -> dict[int, float] | None:
    """Outputs of one interval on the piecewise surfaces, or None if the active one leaves its window."""
    model = form.model
    P = next(s.params for s in form.case.caes if s.id == step.unit)
    values = dict(state)
    flow = {CHARGE: P.c_ain * power if mode == CHARGE else 0.0,
            DISCHARGE: P.c_aout * power if mode == DISCHARGE else 0.0}
    for md, h in step.flows.items():
        if h is not None:
            values[h] = flow[md]
    m_prev = values[step.prev["m"]] if isinstance(step.prev["m"], int) else step.prev["m"]
    for k, r in step.prev.items():
        if isinstance(r, int):
            values[r] = state[r]
    for md in (CHARGE, DISCHARGE, IDLE):
        for target in ("T", "p"):
            nh = step.nexts[(md, target)]
            var = model.variables[nh]
            y = _solve_next(step, md, target, values, link_of, var.lb, var.ub)
            if y is None:
                return None
            values[nh] = y
    mh = step.state["m"]
    values[mh] = m_prev + P.dt * (flow[CHARGE] - flow[DISCHARGE])
    for target in ("T", "p"):
        values[step.state[target]] = values[step.nexts[(mode, target)]]
    for k in ("m", "T", "p"):
        h, var = step.state[k], model.variables[step.state[k]]
        if not var.lb <= values[h] <= var.ub:
            return None
    return values
