"""Command-line entry point: validate, run, sweep, export-lp."""
from __future__ import annotations

import argparse
import shutil
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import tomli_w

from .case import CaseError, bundled, load_case, scale_wind, validate
from .cavern import CavernError
from .formulation import (MODES, FormulationError, FormulationOptions, build_model, complete_warm_start,
                          format_statistics, warm_start_from)
from .milp import emit_lp, emit_mps, write_solution
from .solver import BnbOptions, SolverError, solve_external, solve_mip
from .verify import (DecodeError, VerificationError, audit, compare_runs, decode, kpi_csv, kpis,
                     timeseries_csv, verify_cavern)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_DOMAIN, EXIT_IO, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3, 4


class StageError(Exception):
    def __init__(self, stage: str, code: int, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage, self.code = stage, code


@dataclass
class RunConfig:
    case: str
    mode: str = "model2"
    segments_plus: int = 16
    segments_minus: int = 16
    gap: float = 1e-3
    warm_start: bool | None = None          # None: on for the piecewise models
    solver: str = "builtin"
    solver_command: str = ""
    output: str = "caesuc-out"
    seed: int = 0
    node_limit: int = 100_000
    time_limit: float = 3600.0
    write_lp: bool = False
    t_switch: int | None = None
    sweep_wind: list[float] = field(default_factory=list)
    sweep_segments: list[int] = field(default_factory=list)
    base_dir: str = "."

    def resolved_warm_start(self) -> bool:
        return self.mode in ("model1", "model2") if self.warm_start is None else self.warm_start

    def check(self) -> None:
        if self.mode not in MODES:
            raise StageError("config", EXIT_DOMAIN, f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.warm_start and self.mode not in ("model1", "model2"):
            raise StageError("config", EXIT_DOMAIN, f"warm start needs a piecewise model, not {self.mode}")
        if self.solver not in ("builtin", "external"):
            raise StageError("config", EXIT_DOMAIN, f"unknown solver {self.solver!r}")
        if self.solver == "external" and not self.solver_command:
            raise StageError("config", EXIT_DOMAIN, "external solver needs solver_command with {lp} and {sol}")
        if self.segments_plus < 1 or self.segments_minus < 1:
            raise StageError("config", EXIT_DOMAIN, "segment counts must be positive")
        if not 0 <= self.gap < 1:
            raise StageError("config", EXIT_DOMAIN, "gap must lie in [0, 1)")
        if self.t_switch is not None and self.mode == "no-caes":
            raise StageError("config", EXIT_DOMAIN, "t_switch has no meaning without CAES")

    def case_path(self) -> Path:
        if self.case.startswith("bundled:"):
            return bundled(self.case.split(":", 1)[1])
        p = Path(self.case)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_document(self) -> dict:
        doc = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "base_dir" or v is None or (isinstance(v, list) and not v):
                continue
            doc[f.name] = v
        return doc


_CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"base_dir", "sweep_wind", "sweep_segments"}


def load_config(path: Path) -> RunConfig:
    try:
        doc = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise StageError("config", EXIT_IO, f"no such file: {path}") from None
    except OSError as exc:
        raise StageError("config", EXIT_IO, str(exc)) from None
    except tomllib.TOMLDecodeError as exc:
        raise StageError("config", EXIT_DOMAIN, f"{path}: {exc}") from None
    sweep = doc.pop("sweep", {})
    unknown = set(doc) - _CONFIG_KEYS
    if unknown or set(sweep) - {"wind", "segments"}:
        raise StageError("config", EXIT_DOMAIN, f"unknown keys: {sorted(unknown | (set(sweep) - {'wind', 'segments'}))}")
    if "case" not in doc:
        raise StageError("config", EXIT_DOMAIN, "config needs a 'case' entry")
    if "segments" in doc:
        raise StageError("config", EXIT_DOMAIN, "use segments_plus / segments_minus")
    return RunConfig(**doc, sweep_wind=list(sweep.get("wind", [])),
                     sweep_segments=list(sweep.get("segments", [])), base_dir=str(path.parent))


def _csv_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def config_from_args(args) -> RunConfig:
    if args.config:
        cfg = load_config(Path(args.config))
    elif args.case:
        cfg = RunConfig(case=args.case)
    else:
        raise StageError("config", EXIT_DOMAIN, "give a run configuration file or --case")
    over = {}
    for name in ("case", "mode", "gap", "solver", "solver_command", "output", "seed", "node_limit",
                 "time_limit", "t_switch"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if args.case:
        over["base_dir"] = "."
    if args.segments is not None:
        over["segments_plus"] = over["segments_minus"] = args.segments
    if args.warm_start is not None:
        over["warm_start"] = args.warm_start
    if getattr(args, "write_lp", False):
        over["write_lp"] = True
    if getattr(args, "wind", None):
        over["sweep_wind"] = _csv_floats(args.wind)
    if getattr(args, "segment_grid", None):
        over["sweep_segments"] = [int(x) for x in _csv_floats(args.segment_grid)]
    cfg = replace(cfg, **over)
    cfg.check()
    return cfg


# -- pipeline ---------------------------------------------------------------------------------------

def load_and_validate(path: Path):
    if not path.exists():
        raise StageError("validate", EXIT_IO, f"no such file: {path}")
    try:
        return load_case(path)
    except CaseError as exc:
        raise StageError("validate", EXIT_DOMAIN, "; ".join(exc.problems)) from None
    except OSError as exc:
        raise StageError("validate", EXIT_IO, str(exc)) from None


def _options(cfg: RunConfig, mode: str) -> FormulationOptions:
    return FormulationOptions.for_mode(mode, segments_plus=cfg.segments_plus, segments_minus=cfg.segments_minus,
                                       mip_gap=cfg.gap, t_switch=cfg.t_switch)


def _solve(form, cfg: RunConfig, workdir: Path, warm=None):
    try:
        if cfg.solver == "external":
            return solve_external(form.model, cfg.solver_command, workdir=workdir, timeout=cfg.time_limit)
        opts = BnbOptions(gap=cfg.gap, node_limit=cfg.node_limit, time_limit=cfg.time_limit)
        return solve_mip(form.model, opts, warm_start=warm)
    except (SolverError, OSError) as exc:
        raise StageError("solve", EXIT_SOLVER, str(exc)) from None


@dataclass
class RunOutcome:
    kpi: object
    report: object
    exit_code: int
    messages: list[str]


def run_pipeline(cfg: RunConfig, out: Path, case=None, scen=None, label: str | None = None) -> RunOutcome:
    """Formulate, solve, decode, verify and write every artifact into ``out``."""
    if case is None:
        case, scen = load_and_validate(cfg.case_path())
    out.mkdir(parents=True, exist_ok=True)
    msgs: list[str] = []
    try:
        form = build_model(case, scen, _options(cfg, cfg.mode), name=label or f"{case.name}-{cfg.mode}")
    except (FormulationError, CaseError) as exc:
        raise StageError("formulate", EXIT_DOMAIN, str(exc)) from None
    stats = form.statistics()
    (out / "model_stats.txt").write_text(form.statistics_report())
    if cfg.write_lp:
        (out / "model.lp").write_text(emit_lp(form.model))

    warm, seed_time, seed_nodes = None, 0.0, 0
    if cfg.resolved_warm_start() and cfg.solver == "builtin":
        ct = build_model(case, scen, _options(cfg, "const-temp"), name=f"{case.name}-const-temp-seed")
        seed = _solve(ct, cfg, out)
        seed_time, seed_nodes = seed.wall_time, seed.nodes
        if seed.solution.status in ("optimal", "feasible"):
            warm, why = complete_warm_start(form, warm_start_from(ct, seed.solution, form))
            msgs.append(f"warm start: {why}")
        else:
            msgs.append(f"warm start: seed solve ended {seed.status}; solving cold")
    result = _solve(form, cfg, out, warm)
    (out / "solution.sol").write_text(write_solution(result.solution, form.model))
    if result.solution.status not in ("optimal", "feasible"):
        raise StageError("solve", EXIT_SOLVER, f"solver ended with status {result.status} and no incumbent")
    if result.status == "feasible":
        msgs.append(f"solver stopped at a limit; gap {result.solution.gap:.3g}")
    try:
        schedule = decode(result.solution, form)
        schedule.label = label or f"{case.name}-{cfg.mode}"
        report = verify_cavern(schedule, case)
    except (DecodeError, VerificationError, CavernError) as exc:
        raise StageError("verify", EXIT_VERIFY, str(exc)) from None
    checks = audit(schedule, case, scen)
    summary = kpis(schedule, report, stats, solve_time=result.wall_time + seed_time,
                   nodes=result.nodes + seed_nodes, gap=result.solution.gap)
    (out / "schedule.csv").write_text(timeseries_csv(schedule, report))
    (out / "kpi.csv").write_text(kpi_csv([summary], times=False))
    (out / "verification.txt").write_text(report.text())
    code = EXIT_OK
    for c in report.checks:
        if c.warnings:
            msgs.append(f"unit {c.unit} scenario {c.scenario}: pressure outside window within tolerance "
                        f"at steps {c.warnings}")
        if c.violations:
            P = next(u.params for u in case.caes if u.id == c.unit)
            msgs.append(f"unit {c.unit} scenario {c.scenario}: simulated pressure leaves "
                        f"[{P.p_min}, {P.p_max}] bar at steps {c.violations} (min {c.p_min_sim:.3f})")
            code = EXIT_VERIFY
    if checks["balance"] > 1e-6 or checks["reserve_shortfall"] > 1e-6:
        msgs.append(f"audit: balance residual {checks['balance']:.3g}, reserve shortfall "
                    f"{checks['reserve_shortfall']:.3g}")
        code = EXIT_VERIFY
    lines = [f"case {case.name}", f"mode {cfg.mode}", f"status {result.status}",
             f"objective {summary.total_cost:.6f}", f"wind_shed_mwh {summary.wind_shed_mwh:.6f}",
             f"load_shed_mwh {summary.load_shed_mwh:.6f}", f"nodes {summary.nodes}",
             f"solve_time_s {summary.solve_time:.3f}"]
    if summary.mean_rel_p_err is not None:
        lines.append(f"mean_rel_p_err {summary.mean_rel_p_err:.6e}")
    lines += msgs
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return RunOutcome(summary, report, code, msgs)


def _prepare_output(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise StageError("output", EXIT_IO, f"{path} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


# -- commands ---------------------------------------------------------------------------------------

def cmd_validate(args) -> int:
    path = Path(args.case)
    if not path.exists():
        print(f"error: no such file: {path}", file=sys.stderr)
        return EXIT_IO
    try:
        case, scen = load_case(path)
    except CaseError as exc:
        for p in exc.problems:
            print(f"violation: {p}")
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"ok: {case.name}: {len(case.buses)} buses, {len(case.generators)} generators, "
          f"{len(case.caes)} CAES, {scen.n_periods} steps, {scen.n_scenarios} scenarios")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    out = Path(cfg.output)
    _prepare_output(out, args.force)
    (out / "config.toml").write_text(tomli_w.dumps(cfg.to_document()))
    outcome = run_pipeline(cfg, out)
    print((out / "summary.txt").read_text(), end="")
    return outcome.exit_code


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    if cfg.sweep_wind and cfg.sweep_segments:
        raise StageError("config", EXIT_DOMAIN, "sweep one parameter at a time")
    grid = [("wind", v) for v in cfg.sweep_wind] + [("segments", int(v)) for v in cfg.sweep_segments]
    if not grid:
        raise StageError("config", EXIT_DOMAIN, "empty sweep grid")
    out = Path(cfg.output)
    _prepare_output(out, args.force)
    (out / "config.toml").write_text(tomli_w.dumps(cfg.to_document()))
    case, scen = load_and_validate(cfg.case_path())
    runs, done, status_lines, worst = [], [], ["cell,parameter,value,exit_code,message"], EXIT_OK
    for k, (param, value) in enumerate(grid, start=1):
        cell = out / f"cell{k:02d}"
        c_cfg, c_scen = cfg, scen
        label = f"{case.name}-{cfg.mode}-{param}{value:g}"
        try:
            if param == "wind":
                try:
                    c_scen = scale_wind(scen, [value] * scen.n_scenarios)
                except CaseError as exc:
                    raise StageError("validate", EXIT_DOMAIN, "; ".join(exc.problems)) from None
            else:
                c_cfg = replace(cfg, segments_plus=value, segments_minus=value)
            problems = validate(case, c_scen)
            if problems:
                raise StageError("validate", EXIT_DOMAIN, "; ".join(f"{p.field}: {p.message}" for p in problems))
            res = run_pipeline(c_cfg, cell, case, c_scen, label=label)
            runs.append(res.kpi)
            done.append(cell)
            status_lines.append(f"{k},{param},{value!r},{res.exit_code},{'; '.join(res.messages)!r}")
            worst = max(worst, res.exit_code)
        except StageError as exc:
            status_lines.append(f"{k},{param},{value!r},{exc.code},{str(exc)!r}")
            worst = max(worst, exc.code)
            print(f"cell {k} failed: {exc}", file=sys.stderr)
    (out / "sweep_status.csv").write_text("\n".join(status_lines) + "\n")
    (out / "kpi.csv").write_text(kpi_csv(runs, times=False))
    if len(runs) >= 2:
        text, csv_text = compare_runs(runs, times=False)
        (out / "comparison.txt").write_text(compare_runs(runs)[0])
        (out / "comparison.csv").write_text(csv_text)
        print(text, end="")
    elif runs:
        print((done[0] / "summary.txt").read_text(), end="")
    return worst


def cmd_export_lp(args) -> int:
    path = Path(args.source)
    if not path.exists():
        raise StageError("export", EXIT_IO, f"no such file: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise StageError("export", EXIT_DOMAIN, str(exc)) from None
    if isinstance(doc.get("case"), str):
        cfg = load_config(path)
        if args.mode:
            cfg = replace(cfg, mode=args.mode)
    else:
        cfg = RunConfig(case=str(path), mode=args.mode or "model2", base_dir=".")
    if args.segments is not None:
        cfg = replace(cfg, segments_plus=args.segments, segments_minus=args.segments)
    cfg.check()
    case, scen = load_and_validate(cfg.case_path())
    form = build_model(case, scen, _options(cfg, cfg.mode))
    text = emit_mps(form.model) if args.format == "mps" else emit_lp(form.model)
    if args.output:
        target = Path(args.output)
        if target.exists() and not args.force:
            raise StageError("export", EXIT_IO, f"{target} exists; pass --force to overwrite")
        target.write_text(text)
        print(format_statistics(form.statistics(), form.model.name), end="")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="run configuration (TOML)")
    p.add_argument("--case", help="case file; 'bundled:NAME' selects a shipped case")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--segments", type=int, help="segments for both squares of every product")
    p.add_argument("--gap", type=float)
    ws = p.add_mutually_exclusive_group()
    ws.add_argument("--warm-start", dest="warm_start", action="store_true", default=None)
    ws.add_argument("--no-warm-start", dest="warm_start", action="store_false")
    p.add_argument("--solver", choices=("builtin", "external"))
    p.add_argument("--solver-command", help="external command template with {lp} and {sol}")
    p.add_argument("--output", "-o")
    p.add_argument("--seed", type=int)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--t-switch", type=int)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caesuc", description="Stochastic unit commitment with CAES.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", help="check a case file against schema and domain rules")
    p.add_argument("case")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("run", help="formulate, solve, verify and report one configuration")
    _run_options(p)
    p.add_argument("--write-lp", action="store_true")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="repeat a run over wind multipliers or segment counts")
    _run_options(p)
    p.add_argument("--wind", help="comma-separated wind multipliers")
    p.add_argument("--segment-grid", help="comma-separated segment counts")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("export-lp", help="write the model of a case or run configuration")
    p.add_argument("source", help="case file or run configuration")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--segments", type=int)
    p.add_argument("--format", choices=("lp", "mps"), default="lp")
    p.add_argument("--output", "-o")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_export_lp)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except CaseError as exc:
        print(f"error: [case] {'; '.join(exc.problems)}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
