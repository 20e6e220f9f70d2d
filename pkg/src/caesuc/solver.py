"""LP and MILP solving: dense-tableau simplex, HiGHS LP backend, best-first
branch and bound, and a file-exchange bridge to external solvers."""
from __future__ import annotations

import heapq
import logging
import math
import os
import shlex
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .milp import (BINARY, EQ, GE, LE, MilpModel, SolutionFormatError, SolutionVector,
                   emit_lp, read_solution)

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7
INT_TOL = 1e-6
PIVOT_TOL = 1e-9
DENSE_LIMIT = 10_000        # rows*cols above which "auto" switches to HiGHS


class SolverError(RuntimeError):
    pass


@dataclass
class LpResult:
    status: str                 # optimal | infeasible | unbounded | limit
    x: np.ndarray | None
    objective: float
    iterations: int = 0


# -- dense tableau simplex -------------------------------------------------------

class _Tableau:
    """Two-phase primal simplex on a dense tableau, Dantzig pricing with a
    switch to Bland's rule after a run of degenerate pivots."""

    def __init__(self, A, b, c, basis, max_iter):
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.c = c
        self.basis = list(basis)
        self.max_iter = max_iter
        self.iterations = 0

    def set_cost(self, c):
        m = len(self.basis)
        n = self.T.shape[1] - 1
        self.T[m, :n] = c
        self.T[m, n] = 0.0
        for r, j in enumerate(self.basis):
            if self.T[m, j] != 0.0:
                self.T[m] -= self.T[m, j] * self.T[r]

    def pivot(self, r, j):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = j
        self.iterations += 1

    def run(self, allowed):
        m = len(self.basis)
        T = self.T
        bland = False
        stall = 0
        last = T[m, -1]
        while True:
            if self.iterations >= self.max_iter:
                return "limit"
            red = T[m, :-1]
            cand = np.flatnonzero((red < -PIVOT_TOL) & allowed)
            if cand.size == 0:
                return "optimal"
            j = cand[0] if bland else cand[np.argmin(red[cand])]
            colj = T[:m, j]
            pos = colj > PIVOT_TOL
            if not pos.any():
                return "unbounded"
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / colj[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + 1e-12)
            r = min(ties, key=lambda i: self.basis[i])
            self.pivot(r, j)
            if abs(T[m, -1] - last) <= 1e-12:
                stall += 1
                if stall > 50:
                    bland = True
            else:
                stall = 0
            last = T[m, -1]


def simplex_dense(c, A, senses, rhs, lb, ub, max_iter: int = 50_000) -> LpResult:
    """Solve min c@x s.t. A x (senses) rhs, lb <= x <= ub with the tableau method."""
    A = np.asarray(A.toarray() if hasattr(A, "toarray") else A, dtype=float)
    c = np.asarray(c, dtype=float)
    m0, n0 = A.shape
    # column transforms: x = lb + y | x = ub - y | x = y+ - y-
    cols, shift = [], np.zeros(n0)
    for j in range(n0):
        lo, hi = lb[j], ub[j]
        if lo > -math.inf:
            cols.append((j, 1.0))
            shift[j] = lo
        elif hi < math.inf:
            cols.append((j, -1.0))
            shift[j] = hi
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nt = len(cols)
    M = np.zeros((m0, nt))
    cc = np.zeros(nt)
    for k, (j, s) in enumerate(cols):
        M[:, k] = s * A[:, j]
        cc[k] = s * c[j]
    b = np.asarray(rhs, dtype=float) - A @ shift
    row_sense = list(senses)
    extra = []
    for k, (j, s) in enumerate(cols):
        if lb[j] > -math.inf and ub[j] < math.inf:
            extra.append((k, ub[j] - lb[j]))
    if extra:
        E = np.zeros((len(extra), nt))
        for r, (k, cap) in enumerate(extra):
            E[r, k] = 1.0
        M = np.vstack([M, E])
        b = np.concatenate([b, [cap for _, cap in extra]])
        row_sense += [LE] * len(extra)
    m = M.shape[0]
    # slacks
    n_slack = sum(1 for s in row_sense if s != EQ)
    S = np.zeros((m, n_slack))
    slack_of = {}
    k = 0
    for i, s in enumerate(row_sense):
        if s == LE:
            S[i, k] = 1.0
        elif s == GE:
            S[i, k] = -1.0
        if s != EQ:
            slack_of[i] = k
            k += 1
    full = np.hstack([M, S])
    neg = b < 0
    full[neg] *= -1
    b = np.where(neg, -b, b)
    basis = [-1] * m
    for i, k in slack_of.items():
        if full[i, nt + k] > 0:
            basis[i] = nt + k
    need = [i for i in range(m) if basis[i] < 0]
    n_art = len(need)
    art = np.zeros((m, n_art))
    for a, i in enumerate(need):
        art[i, a] = 1.0
        basis[i] = nt + n_slack + a
    ncol = nt + n_slack + n_art
    tab = _Tableau(np.hstack([full, art]), b, None, basis, max_iter)
    allowed = np.ones(ncol, dtype=bool)
    if n_art:
        cost1 = np.zeros(ncol)
        cost1[nt + n_slack:] = 1.0
        tab.set_cost(cost1)
        st = tab.run(allowed)
        if st == "limit":
            return LpResult("limit", None, math.nan, tab.iterations)
        if -tab.T[m, -1] > 1e-7 * max(1.0, np.abs(b).max(initial=0.0)):
            return LpResult("infeasible", None, math.nan, tab.iterations)
        # drive artificials out of the basis
        keep_rows = list(range(m))
        for r in range(m):
            if tab.basis[r] >= nt + n_slack:
                row = tab.T[r, :nt + n_slack]
                nz = np.flatnonzero(np.abs(row) > PIVOT_TOL)
                if nz.size:
                    tab.pivot(r, nz[0])
                else:
                    keep_rows.remove(r)
        allowed[nt + n_slack:] = False
        if len(keep_rows) < m:
            tab.T = np.vstack([tab.T[keep_rows], tab.T[m:m + 1]])
            tab.basis = [tab.basis[r] for r in keep_rows]
            m = len(keep_rows)
    cost2 = np.zeros(ncol)
    cost2[:nt] = cc
    tab.set_cost(cost2)
    st = tab.run(allowed)
    if st != "optimal":
        return LpResult(st, None, math.nan, tab.iterations)
    y = np.zeros(ncol)
    for r, j in enumerate(tab.basis):
        y[j] = tab.T[r, -1]
    x = shift.copy()
    for k, (j, s) in enumerate(cols):
        x[j] += s * y[k]
    return LpResult("optimal", x, float(c @ x), tab.iterations)


# -- LP relaxation wrapper --------------------------------------------------------

class LpRelaxation:
    """Repeatedly solves the continuous relaxation of one model under new bounds."""

    def __init__(self, model: MilpModel, engine: str = "auto"):
        self.model = model
        c, A, senses, rhs, lb, ub = model.arrays()
        self.c, self.A, self.senses, self.rhs = c, A, senses, rhs
        self.lb0, self.ub0 = lb, ub
        self.constant = model.obj_constant
        if engine == "auto":
            engine = "tableau" if (model.n_cons + 1) * (model.n_vars + 1) <= DENSE_LIMIT else "highs"
        if engine not in ("tableau", "highs"):
            raise SolverError(f"unknown LP engine {engine!r}")
        self.engine = engine
        self._h = None
        if engine == "tableau":
            self._dense = A.toarray()
        else:
            self._setup_highs()

    def _setup_highs(self):
        import highspy

        inf = highspy.kHighsInf
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        lp = highspy.HighsLp()
        n, m = self.model.n_vars, self.model.n_cons
        lp.num_col_, lp.num_row_ = n, m
        lp.col_cost_ = self.c
        lp.col_lower_ = np.where(np.isinf(self.lb0), -inf, self.lb0)
        lp.col_upper_ = np.where(np.isinf(self.ub0), inf, self.ub0)
        lo = np.where(self.senses == LE, -inf, self.rhs).astype(float)
        hi = np.where(self.senses == GE, inf, self.rhs).astype(float)
        lp.row_lower_, lp.row_upper_ = lo, hi
        csc = self.A.tocsc()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = csc.indptr
        lp.a_matrix_.index_ = csc.indices
        lp.a_matrix_.value_ = csc.data
        lp.a_matrix_.num_col_, lp.a_matrix_.num_row_ = n, m
        h.passModel(lp)
        self._h = h
        self._inf = inf
        self._hs = highspy

    def solve(self, lb=None, ub=None) -> LpResult:
        lb = self.lb0 if lb is None else lb
        ub = self.ub0 if ub is None else ub
        if np.any(lb > ub + FEAS_TOL):
            return LpResult("infeasible", None, math.nan)
        if self.engine == "tableau":
            res = simplex_dense(self.c, self._dense, self.senses, self.rhs, lb, ub)
        else:
            res = self._solve_highs(lb, ub)
        if res.x is not None:
            res.objective += self.constant
        return res

    def _solve_highs(self, lb, ub) -> LpResult:
        h, inf = self._h, self._inf
        n = len(lb)
        idx = np.arange(n, dtype=np.int32)
        h.changeColsBounds(n, idx, np.where(np.isinf(lb), -inf, lb), np.where(np.isinf(ub), inf, ub))
        h.run()
        status = h.getModelStatus()
        ms = self._hs.HighsModelStatus
        it = int(h.getInfo().simplex_iteration_count)
        if status == ms.kOptimal:
            x = np.array(h.getSolution().col_value)
            return LpResult("optimal", x, float(self.c @ x), it)
        if status == ms.kInfeasible:
            return LpResult("infeasible", None, math.nan, it)
        if status in (ms.kUnbounded, ms.kUnboundedOrInfeasible):
            # retry cold to separate the two cases
            if status == ms.kUnboundedOrInfeasible:
                h.clearSolver()
                h.run()
                if h.getModelStatus() == ms.kInfeasible:
                    return LpResult("infeasible", None, math.nan, it)
            return LpResult("unbounded", None, math.nan, it)
        # numerical trouble: one cold retry before surfacing it
        h.clearSolver()
        h.run()
        if h.getModelStatus() == ms.kOptimal:
            x = np.array(h.getSolution().col_value)
            return LpResult("optimal", x, float(self.c @ x), it)
        if h.getModelStatus() == ms.kInfeasible:
            return LpResult("infeasible", None, math.nan, it)
        return LpResult("limit", None, math.nan, it)


def solve_lp(model: MilpModel, engine: str = "auto") -> SolutionVector:
    """Solve the continuous relaxation; integrality is ignored."""
    res = LpRelaxation(model, engine).solve()
    if res.status != "optimal":
        return SolutionVector(np.zeros(0), math.nan, res.status)
    return SolutionVector(res.x, res.objective, "optimal")


# -- branch and bound -------------------------------------------------------------

@dataclass
class BnbOptions:
    gap: float = 1e-3
    node_limit: int = 100_000
    time_limit: float = 3600.0
    branching: str = "most-fractional"      # or "pseudo-cost"
    deterministic: bool = True
    workers: int = 1
    engine: str = "auto"
    dive_limit: int = 2_000                  # nodes spent completing a partial warm start

    def __post_init__(self):
        if not 0 <= self.gap < 1:
            raise SolverError("gap must lie in [0, 1)")
        if self.branching not in ("most-fractional", "pseudo-cost"):
            raise SolverError(f"unknown branching rule {self.branching!r}")


@dataclass
class MipResult:
    solution: SolutionVector
    nodes: int
    lp_iterations: int
    wall_time: float
    bound: float
    bound_history: list[tuple[int, float, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    warm_start_used: bool = False

    @property
    def status(self) -> str:
        return self.solution.status

    @property
    def objective(self) -> float:
        return self.solution.objective


def relative_gap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    return max(0.0, (incumbent - bound) / max(1.0, abs(incumbent)))


class _Search:
    def __init__(self, model: MilpModel, opts: BnbOptions, lp: LpRelaxation):
        self.model = model
        self.opts = opts
        self.lp = lp
        self.ints = np.array(model.integer_handles, dtype=int)
        self.prio = np.array([model.variables[h].priority for h in self.ints])
        self.lp_iterations = 0
        self.nodes = 0
        self.incumbent = math.inf
        self.x_best: np.ndarray | None = None
        self.pc_up: dict[int, list[float]] = {}
        self.pc_dn: dict[int, list[float]] = {}

    def evaluate(self, lb, ub) -> LpResult:
        res = self.lp.solve(lb, ub)
        self.lp_iterations += res.iterations
        return res

    def fractional(self, x) -> np.ndarray:
        vals = x[self.ints]
        return np.abs(vals - np.round(vals)) > INT_TOL

    def choose(self, x) -> int | None:
        frac_mask = self.fractional(x)
        if not frac_mask.any():
            return None
        cand = np.flatnonzero(frac_mask)
        top = self.prio[cand].max()
        cand = cand[self.prio[cand] == top]
        vals = x[self.ints[cand]]
        f = vals - np.floor(vals)
        if self.opts.branching == "pseudo-cost":
            scores = []
            for k, fk in zip(cand, f):
                h = int(self.ints[k])
                up = np.mean(self.pc_up[h]) if self.pc_up.get(h) else 1.0
                dn = np.mean(self.pc_dn[h]) if self.pc_dn.get(h) else 1.0
                scores.append(max(fk * dn, 1e-6) * max((1 - fk) * up, 1e-6))
            k = cand[int(np.argmax(scores))]
        else:
            k = cand[int(np.argmin(np.abs(f - 0.5)))]
        return int(self.ints[k])

    def record_pc(self, h, direction, parent_obj, child_obj, frac):
        if not (math.isfinite(parent_obj) and math.isfinite(child_obj)):
            return
        dist = frac if direction == "down" else 1 - frac
        if dist <= 0:
            return
        table = self.pc_dn if direction == "down" else self.pc_up
        table.setdefault(h, []).append((child_obj - parent_obj) / dist)

    def accept(self, x, obj) -> bool:
        xr = x.copy()
        xr[self.ints] = np.round(xr[self.ints])
        if obj < self.incumbent - 1e-12:
            self.incumbent = obj
            self.x_best = xr
            return True
        return False


def _check_warm_start(model: MilpModel, warm: Mapping) -> tuple[dict[int, float], list[str]]:
    fixed, problems = {}, []
    for key, val in warm.items():
        h = model.var(key) if isinstance(key, str) else int(key)
        v = model.variables[h]
        if v.kind != BINARY:
            continue
        if abs(val - round(val)) > INT_TOL:
            problems.append(f"warm start value {val} for {v.name} is not integral")
            continue
        r = float(round(val))
        if r < v.lb - INT_TOL or r > v.ub + INT_TOL:
            problems.append(f"warm start value {r} for {v.name} outside its bounds")
            continue
        fixed[h] = r
    return fixed, problems


def _dive(search: _Search, lb, ub, limit: int) -> tuple[np.ndarray, float] | None:
    """Depth-first search for any integer-feasible point under the given bounds."""
    stack = [(lb, ub)]
    spent = 0
    while stack and spent < limit:
        lb_, ub_ = stack.pop()
        spent += 1
        res = search.evaluate(lb_, ub_)
        if res.status != "optimal":
            continue
        h = search.choose(res.x)
        if h is None:
            return res.x, res.objective
        v = res.x[h]
        down = (lb_, ub_.copy())
        down[1][h] = math.floor(v)
        up = (lb_.copy(), ub_)
        up[0][h] = math.ceil(v)
        # explore the nearer rounding first
        first, second = (up, down) if v - math.floor(v) >= 0.5 else (down, up)
        stack.append(second)
        stack.append(first)
    return None


def solve_mip(model: MilpModel, options: BnbOptions | None = None,
              warm_start: Mapping | None = None) -> MipResult:
    """Best-first branch and bound on the LP relaxation.

    Terminates when ``(incumbent - bound) / max(1, |incumbent|) <= gap`` or a
    limit is hit. A warm start maps integer variables (by name or handle) to
    values; it becomes the initial incumbent when it can be completed to a
    feasible point, and is otherwise reported and ignored.
    """
    opts = options or BnbOptions()
    t0 = time.perf_counter()
    lp = LpRelaxation(model, opts.engine)
    search = _Search(model, opts, lp)
    warnings: list[str] = []
    history: list[tuple[int, float, float]] = []
    lb0, ub0 = lp.lb0.copy(), lp.ub0.copy()
    used_warm = False

    if warm_start:
        fixed, problems = _check_warm_start(model, warm_start)
        if problems:
            warnings.extend(problems)
            warnings.append("warm start ignored")
        else:
            wlb, wub = lb0.copy(), ub0.copy()
            for h, val in fixed.items():
                wlb[h] = wub[h] = val
            found = _dive(search, wlb, wub, opts.dive_limit)
            if found is None:
                warnings.append("warm start could not be completed to a feasible point; ignored")
            else:
                search.accept(*found)
                used_warm = True

    root = search.evaluate(lb0, ub0)
    search.nodes = 1
    if root.status == "infeasible":
        sol = SolutionVector(np.zeros(0), math.nan, "infeasible")
        return MipResult(sol, 1, search.lp_iterations, time.perf_counter() - t0, math.nan, [], warnings, used_warm)
    if root.status == "unbounded":
        sol = SolutionVector(np.zeros(0), -math.inf, "unbounded")
        return MipResult(sol, 1, search.lp_iterations, time.perf_counter() - t0, -math.inf, [], warnings, used_warm)
    if root.status != "optimal":
        raise SolverError(f"root LP failed with status {root.status}")

    counter = 0
    heap: list = []
    pruned = [math.inf]                      # smallest bound among pruned nodes

    # nodes carry only their bound changes relative to the root box
    def bounds_of(changes):
        lb_, ub_ = lb0.copy(), ub0.copy()
        for h_, lo, hi in changes:
            lb_[h_], ub_[h_] = lo, hi
        return lb_, ub_

    def push(bound, changes, h, v, depth):
        nonlocal counter
        heapq.heappush(heap, (bound, counter, depth, changes, h, v))
        counter += 1

    def process(changes, res, parent_bound, depth):
        if res.status != "optimal":
            return
        bound = max(parent_bound, res.objective)
        if relative_gap(search.incumbent, bound) <= opts.gap:
            pruned[0] = min(pruned[0], bound)
            return
        h = search.choose(res.x)
        if h is None:
            search.accept(res.x, res.objective)
            pruned[0] = min(pruned[0], bound)
            return
        push(bound, changes, h, float(res.x[h]), depth)

    def current_bound():
        top = heap[0][0] if heap else math.inf
        return min(top, pruned[0], search.incumbent)

    process((), root, -math.inf, 0)
    global_bound = current_bound() if (heap or math.isfinite(search.incumbent)) else root.objective
    history.append((search.nodes, global_bound, search.incumbent))
    status_limit = False
    pool = ThreadPoolExecutor(opts.workers) if opts.workers > 1 and not opts.deterministic else None
    try:
        while heap:
            if relative_gap(search.incumbent, global_bound) <= opts.gap:
                break
            if search.nodes >= opts.node_limit or time.perf_counter() - t0 > opts.time_limit:
                status_limit = True
                break
            bound, _, depth, changes, h, v = heapq.heappop(heap)
            if relative_gap(search.incumbent, bound) <= opts.gap:
                pruned[0] = min(pruned[0], bound)
                continue
            frac = v - math.floor(v)
            lb_, ub_ = bounds_of(changes)
            down = changes + ((h, lb_[h], float(math.floor(v))),)
            up = changes + ((h, float(math.ceil(v)), ub_[h]),)
            if pool is not None:
                rd, ru = pool.map(lambda c: search.evaluate(*bounds_of(c)), [down, up])
            else:
                rd = search.evaluate(*bounds_of(down))
                ru = search.evaluate(*bounds_of(up))
            search.nodes += 2
            search.record_pc(h, "down", bound, rd.objective if rd.status == "optimal" else math.nan, frac)
            search.record_pc(h, "up", bound, ru.objective if ru.status == "optimal" else math.nan, frac)
            process(down, rd, bound, depth + 1)
            process(up, ru, bound, depth + 1)
            global_bound = max(global_bound, current_bound())
            history.append((search.nodes, global_bound, search.incumbent))
    finally:
        if pool is not None:
            pool.shutdown()

    wall = time.perf_counter() - t0
    if search.x_best is None:
        status = "limit" if status_limit else "infeasible"
        sol = SolutionVector(np.zeros(0), math.nan, status, warnings=warnings)
        return MipResult(sol, search.nodes, search.lp_iterations, wall, global_bound, history, warnings, used_warm)
    if not heap:
        global_bound = max(global_bound, current_bound())
    gap = relative_gap(search.incumbent, global_bound)
    status = "optimal" if gap <= opts.gap + 1e-12 else "feasible"
    sol = SolutionVector(search.x_best, search.incumbent, status, gap, warnings)
    return MipResult(sol, search.nodes, search.lp_iterations, wall, global_bound, history, warnings, used_warm)


# -- external solvers ----------------------------------------------------------------

class ExternalSolverError(SolverError):
    pass


class SolverExitError(ExternalSolverError):
    pass


class SolutionMissingError(ExternalSolverError):
    pass


class SolutionParseError(ExternalSolverError):
    pass


SOLVER_ENV = "CAESUC_SOLVER"


def solve_external(model: MilpModel, command: str, workdir: str | os.PathLike | None = None,
                   timeout: float | None = None) -> MipResult:
    """Write the model as LP, run ``command`` and read back a ``name value`` solution.

    ``command`` is a template with ``{lp}`` and ``{sol}`` placeholders. If the
    ``CAESUC_SOLVER`` environment variable is set, it replaces the first word
    of the command (the solver executable).
    """
    t0 = time.perf_counter()
    workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="caesuc-"))
    workdir.mkdir(parents=True, exist_ok=True)
    lp_path = workdir / f"{model.name}.lp"
    sol_path = workdir / f"{model.name}.sol"
    lp_path.write_text(emit_lp(model))
    if sol_path.exists():
        sol_path.unlink()
    args = shlex.split(command.format(lp=str(lp_path), sol=str(sol_path)))
    override = os.environ.get(SOLVER_ENV)
    if override:
        args[0] = override
    proc = subprocess.run(args, capture_output=True, text=True, timeout=timeout, cwd=workdir)
    if proc.returncode != 0:
        raise SolverExitError(f"external solver exited with {proc.returncode}: {proc.stderr.strip()[:500]}")
    if not sol_path.exists():
        raise SolutionMissingError(f"external solver wrote no solution file at {sol_path}")
    try:
        sol = read_solution(sol_path.read_text(), model)
    except SolutionFormatError as exc:
        raise SolutionParseError(str(exc)) from exc
    wall = time.perf_counter() - t0
    bound = sol.objective - sol.gap * max(1.0, abs(sol.objective)) if math.isfinite(sol.objective) else math.nan
    return MipResult(sol, 0, 0, wall, bound, [], list(sol.warnings))
