"""Solver-agnostic MILP model with LP/MPS writers, readers and solution I/O.

Variables and constraints are addressed by integer handles (their position
in the model). Names must be unique; the formulation encodes model indices
in them (``ps_t7_i1_j2``), see ``docs/formats.md``.
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sps

CONTINUOUS = "continuous"
BINARY = "binary"
LE, EQ, GE = "<=", "=", ">="
SENSES = (LE, EQ, GE)
DROP_TOL = 1e-12

STATUSES = ("optimal", "feasible", "infeasible", "unbounded", "limit")


class ModelError(ValueError):
    pass


@dataclass
class Variable:
    name: str
    kind: str
    lb: float
    ub: float
    priority: int = 0


@dataclass
class Constraint:
    name: str
    coeffs: dict[int, float]
    sense: str
    rhs: float


def _as_items(expr) -> Iterable[tuple[int, float]]:
    if isinstance(expr, Mapping):
        return expr.items()
    return expr


class MilpModel:
    """Minimization MILP built incrementally, then frozen."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[int, float] = {}
        self.obj_constant = 0.0
        self._var_names: dict[str, int] = {}
        self._con_names: dict[str, int] = {}
        self.frozen = False

    # -- building -----------------------------------------------------------
    def _check_open(self):
        if self.frozen:
            raise ModelError("model is frozen")

    def add_variable(self, name: str, kind: str = CONTINUOUS, lb: float = 0.0,
                     ub: float | None = None, priority: int = 0) -> int:
        self._check_open()
        if ub is None:
            ub = 1.0 if kind == BINARY else math.inf
        if name in self._var_names:
            raise ModelError(f"duplicate variable name {name!r}")
        if kind not in (CONTINUOUS, BINARY):
            raise ModelError(f"unknown variable kind {kind!r}")
        lb, ub = float(lb), float(ub)
        if lb > ub:
            raise ModelError(f"variable {name}: lower bound {lb} above upper bound {ub}")
        if kind == BINARY and (lb < 0 or ub > 1):
            raise ModelError(f"binary {name} needs bounds within [0, 1]")
        handle = len(self.variables)
        self.variables.append(Variable(name, kind, lb, ub, priority))
        self._var_names[name] = handle
        return handle

    def add_constraint(self, name: str, expr, sense: str, rhs: float) -> int:
        self._check_open()
        if name in self._con_names:
            raise ModelError(f"duplicate constraint name {name!r}")
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        coeffs: dict[int, float] = {}
        n = len(self.variables)
        for h, c in _as_items(expr):
            if not 0 <= h < n:
                raise ModelError(f"constraint {name}: unknown variable handle {h}")
            coeffs[h] = coeffs.get(h, 0.0) + float(c)
        coeffs = {h: c for h, c in coeffs.items() if abs(c) >= DROP_TOL}
        if not coeffs:
            raise ModelError(f"constraint {name} is empty")
        handle = len(self.constraints)
        self.constraints.append(Constraint(name, coeffs, sense, float(rhs)))
        self._con_names[name] = handle
        return handle

    def set_objective(self, expr, constant: float = 0.0) -> None:
        self._check_open()
        self.objective = {}
        self.obj_constant = float(constant)
        self.add_objective(expr)

    def add_objective(self, expr, constant: float = 0.0) -> None:
        self._check_open()
        n = len(self.variables)
        for h, c in _as_items(expr):
            if not 0 <= h < n:
                raise ModelError(f"objective: unknown variable handle {h}")
            self.objective[h] = self.objective.get(h, 0.0) + float(c)
        self.obj_constant += float(constant)

    def set_bounds(self, handle: int, lb: float | None = None, ub: float | None = None) -> None:
        self._check_open()
        v = self.variables[handle]
        lb = v.lb if lb is None else float(lb)
        ub = v.ub if ub is None else float(ub)
        if lb > ub:
            raise ModelError(f"variable {v.name}: lower bound {lb} above upper bound {ub}")
        v.lb, v.ub = lb, ub

    def freeze(self) -> "MilpModel":
        self.objective = {h: c for h, c in self.objective.items() if abs(c) >= DROP_TOL}
        self.frozen = True
        return self

    # -- queries ------------------------------------------------------------
    def var(self, name: str) -> int:
        return self._var_names[name]

    def con(self, name: str) -> int:
        return self._con_names[name]

    def has_var(self, name: str) -> bool:
        return name in self._var_names

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_cons(self) -> int:
        return len(self.constraints)

    @property
    def integer_handles(self) -> list[int]:
        return [h for h, v in enumerate(self.variables) if v.kind == BINARY]

    def stats(self) -> dict:
        """Exact size counts, overall and per name family (text before the first '_')."""
        nnz = sum(len(c.coeffs) for c in self.constraints)
        families: dict[str, Counter] = {}
        for v in self.variables:
            fam = families.setdefault(v.name.split("_", 1)[0], Counter())
            fam["variables"] += 1
            fam["binaries"] += v.kind == BINARY
        for c in self.constraints:
            fam = families.setdefault(c.name.split("_", 1)[0], Counter())
            fam["constraints"] += 1
            fam["nonzeros"] += len(c.coeffs)
        return {
            "variables": self.n_vars,
            "binaries": len(self.integer_handles),
            "constraints": self.n_cons,
            "nonzeros": nnz,
            "families": {k: dict(v) for k, v in sorted(families.items())},
        }

    def arrays(self):
        """Objective vector, CSR matrix, row senses, rhs and bound vectors."""
        n = self.n_vars
        c = np.zeros(n)
        for h, v in self.objective.items():
            c[h] = v
        rows, cols, vals = [], [], []
        for i, con in enumerate(self.constraints):
            rows.extend([i] * len(con.coeffs))
            cols.extend(con.coeffs.keys())
            vals.extend(con.coeffs.values())
        A = sps.csr_matrix((vals, (rows, cols)), shape=(self.n_cons, n))
        senses = np.array([c_.sense for c_ in self.constraints], dtype=object)
        rhs = np.array([c_.rhs for c_ in self.constraints], dtype=float)
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        return c, A, senses, rhs, lb, ub

    def evaluate(self, x) -> float:
        return self.obj_constant + sum(c * x[h] for h, c in self.objective.items())

    def residuals(self, x) -> list[tuple[str, float]]:
        """Per-constraint violation (positive means violated)."""
        out = []
        for con in self.constraints:
            lhs = sum(c * x[h] for h, c in con.coeffs.items())
            if con.sense == LE:
                viol = lhs - con.rhs
            elif con.sense == GE:
                viol = con.rhs - lhs
            else:
                viol = abs(lhs - con.rhs)
            out.append((con.name, viol))
        return out

    def max_violation(self, x) -> tuple[str | None, float]:
        worst, name = 0.0, None
        for n, v in self.residuals(x):
            if v > worst:
                worst, name = v, n
        for v, val in zip(self.variables, x):
            viol = max(v.lb - val, val - v.ub, 0.0)
            if viol > worst:
                worst, name = viol, f"bound:{v.name}"
        return name, worst


# -- number formatting ---------------------------------------------------------

def fmt(x: float) -> str:
    """Shortest decimal that round-trips, integers without a trailing '.0'."""
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(float(x))


def _terms(coeffs: Iterable[tuple[str, float]]) -> list[str]:
    out = []
    for i, (name, c) in enumerate(coeffs):
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        body = name if mag == 1 else f"{fmt(mag)} {name}"
        if i == 0:
            out.append(body if sign == "+" else f"- {body}")
        else:
            out.append(f"{sign} {body}")
    return out


def _wrap(prefix: str, terms: list[str], suffix: str = "", width: int = 6) -> list[str]:
    lines = []
    for i in range(0, max(len(terms), 1), width):
        chunk = " ".join(terms[i:i + width])
        lines.append((prefix if i == 0 else "   ") + chunk)
    if suffix:
        lines[-1] += suffix
    return lines


def emit_lp(model: MilpModel) -> str:
    """CPLEX-style LP text. Every non-binary variable gets an explicit bound line."""
    names = [v.name for v in model.variables]
    lines = [f"\\ {model.name}", "Minimize"]
    obj = [(names[h], c) for h, c in sorted(model.objective.items())]
    terms = _terms(obj)
    if model.obj_constant != 0.0 or not terms:
        k = model.obj_constant
        if not terms:
            terms = [fmt(k)]
        else:
            terms.append(f"{'-' if k < 0 else '+'} {fmt(abs(k))}")
    lines += _wrap(" obj: ", terms)
    lines.append("Subject To")
    for con in model.constraints:
        t = _terms((names[h], c) for h, c in sorted(con.coeffs.items()))
        lines += _wrap(f" {con.name}: ", t, f" {con.sense} {fmt(con.rhs)}")
    lines.append("Bounds")
    for v in model.variables:
        if v.kind == BINARY and v.lb == 0 and v.ub == 1:
            continue
        if v.lb == v.ub:
            lines.append(f" {v.name} = {fmt(v.lb)}")
        elif v.lb == -math.inf and v.ub == math.inf:
            lines.append(f" {v.name} free")
        elif v.ub == math.inf:
            lines.append(f" {v.name} >= {fmt(v.lb)}")
        else:
            lines.append(f" {fmt(v.lb)} <= {v.name} <= {fmt(v.ub)}")
    bins = [v.name for v in model.variables if v.kind == BINARY]
    if bins:
        lines.append("Binaries")
        for i in range(0, len(bins), 8):
            lines.append(" " + " ".join(bins[i:i + 8]))
    lines.append("End")
    return "\n".join(lines) + "\n"


_SECTION = re.compile(r"^(minimize|minimum|min|subject to|such that|st|s\.t\.|bounds|bound|"
                      r"binaries|binary|bin|generals|general|end)$", re.I)


def _parse_num(tok: str) -> float:
    t = tok.lower()
    if t in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(tok)


def _parse_linear(tokens: list[str]) -> tuple[list[tuple[str, float]], float]:
    """Parse ``[sign] [coef] name ...``; bare numbers accumulate into a constant."""
    terms, const = [], 0.0
    sign, coef = 1.0, None
    for tok in tokens:
        if tok in "+-":
            sign = -1.0 if tok == "-" else 1.0
            continue
        try:
            num = float(tok)
        except ValueError:
            terms.append((tok, sign * (1.0 if coef is None else coef)))
            sign, coef = 1.0, None
            continue
        if coef is not None:
            raise ModelError(f"two numbers in a row near {tok!r}")
        coef = num
    if coef is not None:
        const += sign * coef
    return terms, const


def parse_lp(text: str) -> MilpModel:
    """Read the LP dialect written by :func:`emit_lp`."""
    model = MilpModel()
    section = None
    statements: list[tuple[str, str]] = []
    buf: list[str] = []

    def flush():
        if buf:
            statements.append((section, " ".join(buf)))
            buf.clear()

    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].strip()
        if raw.startswith("\\ ") and model.name == "model" and not statements and section is None:
            model.name = raw[2:].strip() or "model"
        if not line:
            continue
        if _SECTION.match(line):
            flush()
            key = line.lower()
            section = {"minimize": "obj", "minimum": "obj", "min": "obj", "subject to": "st",
                       "such that": "st", "st": "st", "s.t.": "st", "bounds": "bounds",
                       "bound": "bounds", "binaries": "bin", "binary": "bin", "bin": "bin",
                       "generals": "gen", "general": "gen", "end": "end"}[key]
            continue
        if section in ("obj", "st"):
            # a new row starts with "name:"; otherwise continuation
            if re.match(r"^[^\s:]+:", line) and buf:
                flush()
            buf.append(line)
        else:
            statements.append((section, line))
    flush()

    names_seen: dict[str, None] = {}
    parsed_rows = []
    objective = None
    bounds_lines, binaries = [], []
    for sec, stmt in statements:
        if sec == "obj":
            _, _, body = stmt.partition(":") if re.match(r"^[^\s:]+:", stmt) else ("", "", stmt)
            objective = _parse_linear(body.split())
            for n, _c in objective[0]:
                names_seen.setdefault(n)
        elif sec == "st":
            m = re.match(r"^([^\s:]+):\s*(.*)$", stmt)
            if not m:
                raise ModelError(f"constraint without a name: {stmt!r}")
            cname, body = m.groups()
            mm = re.match(r"^(.*?)(<=|>=|=<|=>|=|<|>)\s*(\S+)\s*$", body)
            if not mm:
                raise ModelError(f"cannot parse constraint {cname}")
            lhs, op, rhs = mm.groups()
            op = {"=<": LE, "<": LE, "=>": GE, ">": GE}.get(op, op)
            terms, const = _parse_linear(lhs.split())
            for n, _c in terms:
                names_seen.setdefault(n)
            parsed_rows.append((cname, terms, op, _parse_num(rhs) - const))
        elif sec == "bounds":
            bounds_lines.append(stmt)
        elif sec == "bin":
            binaries.extend(stmt.split())
    bounds: dict[str, list[float]] = {}
    for stmt in bounds_lines:
        toks = stmt.split()
        if len(toks) == 2 and toks[1].lower() == "free":
            bounds[toks[0]] = [-math.inf, math.inf]
            names_seen.setdefault(toks[0])
        elif len(toks) == 3:
            a, op, b = toks
            try:
                val = _parse_num(b)
                name = a
            except ValueError:
                val, name = _parse_num(a), b
                op = {"<=": ">=", ">=": "<="}.get(op, op)
            names_seen.setdefault(name)
            lo, hi = bounds.get(name, [0.0, math.inf])
            if op == "=":
                lo = hi = val
            elif op in ("<=", "=<"):
                hi = val
            else:
                lo = val
            bounds[name] = [lo, hi]
        elif len(toks) == 5:
            lo, _, name, _, hi = toks
            names_seen.setdefault(name)
            bounds[name] = [_parse_num(lo), _parse_num(hi)]
        else:
            raise ModelError(f"cannot parse bound {stmt!r}")
    for b in binaries:
        names_seen.setdefault(b)
    binset = set(binaries)
    for name in names_seen:
        if name in binset:
            lo, hi = bounds.get(name, [0.0, 1.0])
            model.add_variable(name, BINARY, lo, hi)
        else:
            lo, hi = bounds.get(name, [0.0, math.inf])
            model.add_variable(name, CONTINUOUS, lo, hi)
    if objective is not None:
        model.set_objective({model.var(n): c for n, c in _merge(objective[0])}, objective[1])
    for cname, terms, op, rhs in parsed_rows:
        model.add_constraint(cname, {model.var(n): c for n, c in _merge(terms)}, op, rhs)
    return model


def _merge(terms):
    acc: dict[str, float] = {}
    for n, c in terms:
        acc[n] = acc.get(n, 0.0) + c
    return acc.items()


# -- MPS -----------------------------------------------------------------------

def _mps_line(f1: str = "", f2: str = "", f3: str = "", f4: str = "", f5: str = "", f6: str = "") -> str:
    # fixed columns: 2-3, 5-12, 15-22, 25-36, 40-47, 50-61; long entries push later fields right
    line = " " + f1.ljust(2) + " " + f2.ljust(8)
    if f3 or f4:
        line += "  " + f3.ljust(8) + "  " + f4.rjust(12)
    if f5 or f6:
        line += "   " + f5.ljust(8) + "  " + f6.rjust(12)
    return line.rstrip()


def emit_mps(model: MilpModel) -> str:
    """Fixed-format MPS; the objective constant is written as ``-constant`` on the RHS of ``obj``."""
    names = [v.name for v in model.variables]
    lines = [f"NAME          {model.name}", "ROWS", _mps_line("N", "obj")]
    code = {LE: "L", EQ: "E", GE: "G"}
    for con in model.constraints:
        lines.append(_mps_line(code[con.sense], con.name))
    lines.append("COLUMNS")
    by_col: dict[int, list[tuple[str, float]]] = {h: [] for h in range(model.n_vars)}
    for h, c in sorted(model.objective.items()):
        by_col[h].append(("obj", c))
    for con in model.constraints:
        for h, c in con.coeffs.items():
            by_col[h].append((con.name, c))
    in_int = False
    marker = 0

    def _marker(tag):
        return f"    {'M%07d' % marker:<8}  'MARKER'                 '{tag}'"

    for h, v in enumerate(model.variables):
        is_int = v.kind == BINARY
        if is_int and not in_int:
            lines.append(_marker("INTORG"))
            in_int = True
        elif not is_int and in_int:
            lines.append(_marker("INTEND"))
            marker += 1
            in_int = False
        entries = by_col[h]
        if not entries:
            lines.append(_mps_line("", names[h], "obj", "0"))
        for row, c in entries:
            lines.append(_mps_line("", names[h], row, fmt(c)))
    if in_int:
        lines.append(_marker("INTEND"))
    lines.append("RHS")
    if model.obj_constant != 0.0:
        lines.append(_mps_line("", "RHS", "obj", fmt(-model.obj_constant)))
    for con in model.constraints:
        if con.rhs != 0.0:
            lines.append(_mps_line("", "RHS", con.name, fmt(con.rhs)))
    lines.append("BOUNDS")
    for v in model.variables:
        if v.kind == BINARY:
            if v.lb == 0 and v.ub == 1:
                lines.append(_mps_line("BV", "BND", v.name))
            else:
                lines.append(_mps_line("LO", "BND", v.name, fmt(v.lb)))
                lines.append(_mps_line("UP", "BND", v.name, fmt(v.ub)))
            continue
        if v.lb == v.ub:
            lines.append(_mps_line("FX", "BND", v.name, fmt(v.lb)))
        elif v.lb == -math.inf and v.ub == math.inf:
            lines.append(_mps_line("FR", "BND", v.name))
        else:
            if v.lb == -math.inf:
                lines.append(_mps_line("MI", "BND", v.name))
            elif v.lb != 0.0:
                lines.append(_mps_line("LO", "BND", v.name, fmt(v.lb)))
            if v.ub != math.inf:
                lines.append(_mps_line("UP", "BND", v.name, fmt(v.ub)))
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def parse_mps(text: str) -> MilpModel:
    """Read MPS written by :func:`emit_mps` (whitespace-separated fields)."""
    model = MilpModel()
    section = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    obj_row = None
    cols: dict[str, list[tuple[str, float]]] = {}
    col_int: dict[str, bool] = {}
    rhs: dict[str, float] = {}
    bounds: dict[str, list] = {}
    in_int = False
    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            toks = raw.split()
            section = toks[0].upper()
            if section == "NAME" and len(toks) > 1:
                model.name = toks[1]
            continue
        toks = raw.split()
        if section == "ROWS":
            kind, name = toks
            if kind == "N":
                obj_row = obj_row or name
            else:
                row_sense[name] = {"L": LE, "E": EQ, "G": GE}[kind]
                row_order.append(name)
        elif section == "COLUMNS":
            if len(toks) >= 3 and toks[1] == "'MARKER'":
                in_int = toks[2] == "'INTORG'"
                continue
            col = toks[0]
            if col not in cols:
                cols[col] = []
                col_int[col] = in_int
            for i in range(1, len(toks) - 1, 2):
                cols[col].append((toks[i], float(toks[i + 1])))
        elif section == "RHS":
            for i in range(1, len(toks) - 1, 2):
                rhs[toks[i]] = float(toks[i + 1])
        elif section == "BOUNDS":
            kind, _, col = toks[:3]
            val = float(toks[3]) if len(toks) > 3 else None
            lo, hi = bounds.get(col, [None, None])
            if kind == "UP":
                hi = val
            elif kind == "LO":
                lo = val
            elif kind == "FX":
                lo = hi = val
            elif kind == "FR":
                lo, hi = -math.inf, math.inf
            elif kind == "MI":
                lo = -math.inf
            elif kind == "PL":
                hi = math.inf
            elif kind == "BV":
                lo, hi = 0.0, 1.0
                col_int[col] = True
            bounds[col] = [lo, hi]
    for col in cols:
        lo, hi = bounds.get(col, [None, None])
        if col_int[col]:
            model.add_variable(col, BINARY, 0.0 if lo is None else lo, 1.0 if hi is None else hi)
        else:
            model.add_variable(col, CONTINUOUS, 0.0 if lo is None else lo,
                               math.inf if hi is None else hi)
    rows: dict[str, dict[int, float]] = {r: {} for r in row_order}
    obj: dict[int, float] = {}
    for col, entries in cols.items():
        h = model.var(col)
        for row, c in entries:
            if row == obj_row:
                obj[h] = obj.get(h, 0.0) + c
            else:
                rows[row][h] = rows[row].get(h, 0.0) + c
    model.set_objective(obj, -rhs.get(obj_row, 0.0))
    for r in row_order:
        model.add_constraint(r, rows[r], row_sense[r], rhs.get(r, 0.0))
    return model


# -- solutions -------------------------------------------------------------------

@dataclass
class SolutionVector:
    values: np.ndarray
    objective: float
    status: str
    gap: float = 0.0
    warnings: list[str] = field(default_factory=list)
    names: list[str] | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ModelError(f"unknown status {self.status!r}")

    def value(self, model: MilpModel, name: str) -> float:
        return float(self.values[model.var(name)])

    def as_dict(self, model: MilpModel) -> dict[str, float]:
        return {v.name: float(x) for v, x in zip(model.variables, self.values)}


class SolutionFormatError(ModelError):
    pass


def write_solution(sol: SolutionVector, model: MilpModel) -> str:
    lines = [f"# status {sol.status}"]
    if sol.values is not None and len(sol.values):
        lines.append(f"# objective {fmt(sol.objective)}")
        lines.append(f"# gap {fmt(sol.gap)}")
        for v, x in zip(model.variables, sol.values):
            lines.append(f"{v.name} {fmt(float(x))}")
    return "\n".join(lines) + "\n"


def read_solution(text: str, model: MilpModel, tol: float = 1e-6) -> SolutionVector:
    """Parse ``name value`` lines; ``# key value`` lines carry status, objective and gap."""
    values = np.zeros(model.n_vars)
    seen = np.zeros(model.n_vars, dtype=bool)
    meta: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2:
                meta[parts[0].lower()] = parts[1]
            continue
        parts = line.split()
        if len(parts) != 2:
            raise SolutionFormatError(f"line {lineno}: expected 'name value', got {raw!r}")
        name, sval = parts
        try:
            val = float(sval)
        except ValueError:
            raise SolutionFormatError(f"line {lineno}: bad number {sval!r}") from None
        if not model.has_var(name):
            raise SolutionFormatError(f"line {lineno}: unknown variable {name!r}")
        h = model.var(name)
        values[h] = val
        seen[h] = True
    status = meta.get("status")
    if status is not None and status not in STATUSES:
        raise SolutionFormatError(f"unknown status {status!r}")
    if status in ("infeasible", "unbounded") or (status == "limit" and not seen.any()):
        return SolutionVector(np.zeros(0), math.nan, status)
    warnings = [f"missing value for {model.variables[h].name}; using 0" for h in np.flatnonzero(~seen)]
    for h, v in enumerate(model.variables):
        x = values[h]
        if x < v.lb - tol or x > v.ub + tol:
            raise SolutionFormatError(f"value {x} for {v.name} outside [{v.lb}, {v.ub}]")
        if v.kind == BINARY and abs(x - round(x)) > tol:
            raise SolutionFormatError(f"binary {v.name} has fractional value {x}")
    if status is None:
        _, worst = model.max_violation(values)
        status = "feasible" if worst <= tol else "infeasible"
    objective = float(meta["objective"]) if "objective" in meta else model.evaluate(values)
    gap = float(meta.get("gap", 0.0))
    return SolutionVector(values, objective, status, gap, warnings)
