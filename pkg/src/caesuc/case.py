"""Grid case data model, TOML case files and validation.

A case has two time grids: commitment decisions are hourly, while dispatch,
wind, load and the cavern run on fine steps (``steps_per_hour`` per hour).
Scenario data are indexed ``[scenario][fine step]``.
"""
from __future__ import annotations

import io
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import tomli_w

from .cavern import CavernError, CavernParams, CavernState

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

IDLE_LOGIC = "Eq.16-logic requires positive minimum power"


class CaseError(ValueError):
    """Raised when a case file cannot be turned into a valid case."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(str(p) for p in self.problems))


@dataclass(frozen=True)
class Bus:
    id: int
    name: str = ""


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    susceptance: float              # MW per rad on the per-unit base used by the case
    capacity: float                 # MW


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_min: float
    p_max: float
    cost_a: float                   # $/MWh
    cost_b: float = 0.0             # $/h while committed
    startup_cost: float = 0.0
    shutdown_cost: float = 0.0
    ramp_up_cost: float = 0.0       # $/MW of upward ramp reserve
    ramp_down_cost: float = 0.0
    ramp_up: float = math.inf       # MW per fine step
    ramp_down: float = math.inf
    min_up: int = 1                 # hours
    min_down: int = 1
    initial_on: bool = False


@dataclass(frozen=True)
class WindFarm:
    id: int
    bus: int
    capacity: float                 # MW; availability = capacity * scenario profile


@dataclass(frozen=True)
class CaesUnit:
    id: int
    bus: int
    params: CavernParams
    initial: CavernState


@dataclass(frozen=True)
class Costs:
    wind_shed: float = 100.0        # $/MWh
    charge: float = 3.0
    discharge: float = 3.0
    reserve: float = 3.0
    load_shed: float = 5000.0


@dataclass(frozen=True)
class GridCase:
    name: str
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    wind: tuple[WindFarm, ...]
    caes: tuple[CaesUnit, ...]
    load_shares: tuple[tuple[int, float], ...]      # (bus id, share of system load)
    steps_per_hour: int = 3

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def incidence(self) -> np.ndarray:
        """Bus x line matrix with -1 at the from-bus and +1 at the to-bus."""
        pos = {b: k for k, b in enumerate(self.bus_ids)}
        M = np.zeros((len(self.buses), len(self.lines)))
        for k, ln in enumerate(self.lines):
            M[pos[ln.from_bus], k] = -1.0
            M[pos[ln.to_bus], k] = 1.0
        return M

    def share(self, bus: int) -> float:
        return dict(self.load_shares).get(bus, 0.0)

    def without_caes(self) -> "GridCase":
        return replace(self, caes=())


@dataclass(frozen=True)
class ScenarioSet:
    probabilities: tuple[tuple[float, ...], ...]    # [fine step][scenario]
    load: tuple[tuple[float, ...], ...]             # [scenario][fine step], system MW
    wind: tuple[tuple[float, ...], ...]             # [scenario][fine step], per unit of capacity
    reserve: tuple[float, ...] | None = None        # MW per fine step; None -> largest unit
    costs: Costs = field(default_factory=Costs)

    @property
    def n_scenarios(self) -> int:
        return len(self.load)

    @property
    def n_periods(self) -> int:
        return len(self.load[0]) if self.load else 0

    def psi(self, t: int, j: int) -> float:
        return self.probabilities[t][j]

    def wind_max(self, farm: WindFarm, t: int, j: int) -> float:
        return farm.capacity * self.wind[j][t]

    def reserve_at(self, case: GridCase, t: int) -> float:
        if self.reserve is not None:
            return self.reserve[t]
        return max((g.p_max for g in case.generators), default=0.0)


@dataclass(frozen=True)
class Violation:
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


def scale_wind(scen: ScenarioSet, multipliers) -> ScenarioSet:
    """Multiply each scenario's wind profile by its own factor."""
    multipliers = list(multipliers)
    if len(multipliers) != scen.n_scenarios:
        raise CaseError(f"expected {scen.n_scenarios} multipliers, got {len(multipliers)}")
    if any(not (f > 0 and math.isfinite(f)) for f in multipliers):
        raise CaseError("wind multipliers must be positive")
    rows = tuple(tuple(f * w for w in row) for f, row in zip(multipliers, scen.wind))
    return replace(scen, wind=rows)


def validate(case: GridCase, scen: ScenarioSet) -> list[Violation]:
    out: list[Violation] = []

    def bad(where, msg):
        out.append(Violation(where, msg))

    bus_ids = case.bus_ids
    if not bus_ids:
        bad("buses", "at least one bus is required")
    if len(set(bus_ids)) != len(bus_ids):
        bad("buses", "duplicate bus id")
    known = set(bus_ids)
    for kind, items in (("lines", case.lines), ("generators", case.generators),
                        ("wind", case.wind), ("caes", case.caes)):
        ids = [x.id for x in items]
        if len(set(ids)) != len(ids):
            bad(kind, "duplicate id")
    for ln in case.lines:
        where = f"lines[{ln.id}]"
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                bad(where, f"unknown bus {end}")
        if ln.from_bus == ln.to_bus:
            bad(where, "line must join two different buses")
        if not ln.capacity > 0:
            bad(where, f"capacity must be positive (got {ln.capacity})")
        if not ln.susceptance > 0:
            bad(where, f"susceptance must be positive (got {ln.susceptance})")
    for g in case.generators:
        where = f"generators[{g.id}]"
        if g.bus not in known:
            bad(where, f"unknown bus {g.bus}")
        if not 0 <= g.p_min <= g.p_max or not g.p_max > 0:
            bad(where, f"need 0 <= p_min <= p_max and p_max > 0 (got {g.p_min}, {g.p_max})")
        for name in ("cost_a", "cost_b", "startup_cost", "shutdown_cost", "ramp_up_cost", "ramp_down_cost"):
            if getattr(g, name) < 0:
                bad(where, f"{name} must be non-negative")
        if not (g.ramp_up > 0 and g.ramp_down > 0):
            bad(where, "ramp limits must be positive")
        if g.min_up < 1 or g.min_down < 1:
            bad(where, "minimum up/down times must be at least 1")
    for w in case.wind:
        if w.bus not in known:
            bad(f"wind[{w.id}]", f"unknown bus {w.bus}")
        if not w.capacity > 0:
            bad(f"wind[{w.id}]", "capacity must be positive")
    step_seconds = 3600.0 / case.steps_per_hour if case.steps_per_hour > 0 else math.nan
    for s in case.caes:
        where = f"caes[{s.id}]"
        P = s.params
        if s.bus not in known:
            bad(where, f"unknown bus {s.bus}")
        if not (P.pch_min > 0 and P.pdch_min > 0):
            bad(where, IDLE_LOGIC)
        if not math.isclose(P.dt, step_seconds, rel_tol=1e-9):
            bad(where, f"dt {P.dt} s does not match the fine step of {step_seconds} s")
        if not P.p_min <= s.initial.p <= P.p_max:
            bad(where, "initial pressure outside the operating window")
        if not P.T_min <= s.initial.T <= P.T_max:
            bad(where, "initial temperature outside the temperature window")
    for bus, share in case.load_shares:
        if bus not in known:
            bad("loads", f"unknown bus {bus}")
        if share < 0:
            bad("loads", f"negative share at bus {bus}")
    if case.load_shares and not math.isclose(sum(s for _, s in case.load_shares), 1.0, abs_tol=1e-9):
        bad("loads", "bus shares must sum to 1")
    if case.steps_per_hour < 1:
        bad("case", "steps_per_hour must be at least 1")

    n_t, n_j = scen.n_periods, scen.n_scenarios
    if n_j == 0 or n_t == 0:
        bad("scenarios", "at least one scenario and one period are required")
        return out
    if case.steps_per_hour >= 1 and n_t % case.steps_per_hour:
        bad("scenarios", f"{n_t} fine steps is not a whole number of hours")
    if any(len(r) != n_t for r in scen.load) or len(scen.wind) != n_j or any(len(r) != n_t for r in scen.wind):
        bad("scenarios", "load and wind must be n_scenarios x n_periods")
    if len(scen.probabilities) != n_t or any(len(r) != n_j for r in scen.probabilities):
        bad("scenarios.probabilities", "need one probability per scenario and period")
    else:
        for t, row in enumerate(scen.probabilities):
            if any(p < 0 for p in row) or abs(sum(row) - 1.0) > 1e-9:
                bad("scenarios.probabilities", f"period {t + 1}: probabilities must be >= 0 and sum to 1")
                break
    if any(v < 0 for r in scen.load for v in r):
        bad("scenarios.load", "loads must be non-negative")
    if any(v < 0 for r in scen.wind for v in r):
        bad("scenarios.wind", "wind availability must be non-negative")
    if scen.reserve is not None:
        if len(scen.reserve) != n_t or any(r < 0 for r in scen.reserve):
            bad("scenarios.reserve", "need one non-negative reserve per period")
    for name in ("wind_shed", "charge", "discharge", "reserve", "load_shed"):
        if getattr(scen.costs, name) < 0:
            bad("costs", f"{name} must be non-negative")
    if not out and case.generators:
        cap = sum(g.p_max for g in case.generators)
        need = max(max(r) for r in scen.load) + max(scen.reserve_at(case, t) for t in range(n_t))
        if cap + 1e-9 < need:
            bad("generators", f"total capacity {cap} MW cannot cover peak load plus reserve ({need} MW)")
    return out


# -- file format -------------------------------------------------------------

def _schema() -> dict:
    text = resources.files("caesuc").joinpath("data/case_schema.json").read_text()
    return json.loads(text)


_HEADER = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.]+)\s*\]\]?")


def _locate(text: str, path) -> int | None:
    """Best-effort line number of a schema path inside the TOML source."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    table, target = None, keys[-1]
    wanted = ".".join(keys[:-1]) if len(keys) > 1 else ""
    fallback = None
    for no, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            table = m.group(1)
            if len(keys) == 1 and table == target:
                return no
            continue
        if re.match(rf"^\s*{re.escape(target)}\s*=", line):
            if (table or "") == wanted or (table or "").startswith(wanted):
                return no
            fallback = fallback or no
    return fallback


def _cavern_from(d: dict) -> CavernParams:
    names = {f.name for f in fields(CavernParams)}
    return CavernParams(**{k: v for k, v in d.items() if k in names})


def _from_document(doc: dict) -> tuple[GridCase, ScenarioSet]:
    meta = doc.get("case", {})
    buses = tuple(Bus(b["id"], b.get("name", "")) for b in doc["buses"])
    lines = tuple(Line(ln["id"], ln["from"], ln["to"], float(ln["susceptance"]), float(ln["capacity"]))
                  for ln in doc.get("lines", []))
    gens = []
    for g in doc["generators"]:
        gens.append(Generator(
            g["id"], g["bus"], float(g["p_min"]), float(g["p_max"]), float(g["cost_a"]),
            float(g.get("cost_b", 0.0)), float(g.get("startup_cost", 0.0)),
            float(g.get("shutdown_cost", 0.0)), float(g.get("ramp_up_cost", 0.0)),
            float(g.get("ramp_down_cost", 0.0)), float(g.get("ramp_up", math.inf)),
            float(g.get("ramp_down", math.inf)), int(g.get("min_up", 1)), int(g.get("min_down", 1)),
            bool(g.get("initial_on", False))))
    wind = tuple(WindFarm(w["id"], w["bus"], float(w["capacity"])) for w in doc.get("wind", []))
    caes = []
    for s in doc.get("caes", []):
        try:
            params = _cavern_from(s)
        except (CavernError, TypeError) as exc:
            raise CaseError(f"caes[{s.get('id')}]: {exc}") from exc
        T0 = float(s.get("initial_temperature", params.wall_temperature))
        p0 = float(s["initial_pressure"])
        m0 = float(s.get("initial_mass", params.mass_from(p0, T0)))
        caes.append(CaesUnit(s["id"], s["bus"], params, CavernState(m0, T0, p0)))
    shares = tuple(sorted((int(k), float(v)) for k, v in doc["loads"]["shares"].items()))
    case = GridCase(meta.get("name", "case"), buses, lines, tuple(gens), wind, tuple(caes), shares,
                    int(meta.get("steps_per_hour", 3)))
    sc = doc["scenarios"]
    load = tuple(tuple(float(v) for v in row) for row in sc["load"])
    n_t = len(load[0]) if load else 0
    probs = sc["probabilities"]
    if probs and not isinstance(probs[0], list):
        probs = [probs] * n_t
    costs = Costs(**{k: float(v) for k, v in doc.get("costs", {}).items()})
    reserve = sc.get("reserve")
    scen = ScenarioSet(tuple(tuple(float(p) for p in row) for row in probs), load,
                       tuple(tuple(float(v) for v in row) for row in sc["wind"]),
                       tuple(float(r) for r in reserve) if reserve is not None else None, costs)
    return case, scen


def loads_case(text: str) -> tuple[GridCase, ScenarioSet]:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise CaseError(f"syntax error: {exc}") from exc
    validator = jsonschema.Draft202012Validator(_schema())
    problems = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path]):
        path = list(err.absolute_path)
        where = ".".join(str(p) for p in path) or "<root>"
        if err.validator == "additionalProperties":
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})] \
                if isinstance(err.instance, dict) else []
            path = path + extra[:1]
        line = _locate(text, path)
        suffix = f" (line {line})" if line else ""
        problems.append(f"{where}: {err.message}{suffix}")
    if problems:
        raise CaseError(problems)
    case, scen = _from_document(doc)
    issues = validate(case, scen)
    if issues:
        raise CaseError([str(v) for v in issues])
    return case, scen


def load_case(source) -> tuple[GridCase, ScenarioSet]:
    """Read a TOML case from a path or a text stream."""
    if hasattr(source, "read"):
        return loads_case(source.read())
    return loads_case(Path(source).read_text())


def _finite(v: float):
    return v if math.isfinite(v) else None


def to_document(case: GridCase, scen: ScenarioSet) -> dict:
    doc: dict = {"case": {"name": case.name, "steps_per_hour": case.steps_per_hour}}
    doc["buses"] = [{"id": b.id, **({"name": b.name} if b.name else {})} for b in case.buses]
    doc["lines"] = [{"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "susceptance": ln.susceptance,
                     "capacity": ln.capacity} for ln in case.lines]
    gens = []
    for g in case.generators:
        d = asdict(g)
        for key in ("ramp_up", "ramp_down"):
            if not math.isfinite(d[key]):
                del d[key]
        gens.append(d)
    doc["generators"] = gens
    doc["wind"] = [asdict(w) for w in case.wind]
    doc["caes"] = []
    for s in case.caes:
        d = {"id": s.id, "bus": s.bus, **asdict(s.params)}
        d.update(initial_mass=s.initial.m, initial_temperature=s.initial.T, initial_pressure=s.initial.p)
        doc["caes"].append(d)
    doc["loads"] = {"shares": {str(b): v for b, v in case.load_shares}}
    sc = {"probabilities": [list(r) for r in scen.probabilities],
          "load": [list(r) for r in scen.load], "wind": [list(r) for r in scen.wind]}
    if scen.reserve is not None:
        sc["reserve"] = list(scen.reserve)
    doc["scenarios"] = sc
    doc["costs"] = asdict(scen.costs)
    for key in ("lines", "wind", "caes"):
        if not doc[key]:
            del doc[key]
    return doc


def dumps_case(case: GridCase, scen: ScenarioSet) -> str:
    return tomli_w.dumps(to_document(case, scen))


def bundled(name: str) -> Path:
    """Path of a case file shipped with the package (``desk_case`` or ``deep_cycle``)."""
    if not name.endswith(".toml"):
        name += ".toml"
    return Path(str(resources.files("caesuc").joinpath("data", name)))
