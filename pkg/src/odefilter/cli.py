"""Command-line interface.

Subcommands
-----------
solve               one adaptive solve, grid values as CSV or JSON
benchmark           work-precision sweep over a tolerance ladder
calibration-report  chi-square statistics over a tolerance ladder
list-problems       registry names and parameters

Exit codes are 0 on success, 2 on usage errors and 3 when a solve fails;
failures also write one JSON line to standard error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from typing import Optional, Sequence

import numpy as np

from .baseline import ReferenceFailure, reference_solution
from .control import ControllerConfig
from .metrics import Chi2Error, chi_square, tolerance_ladder, work_precision
from .problems import ProblemError, available_problems, get_problem
from .solver import ALGORITHMS, ConfigurationError, SolverSpec, solve_adaptive
from .calibration import DiffusionModel

__all__ = ["main", "run", "build_parser", "UsageError", "format_float", "SOLVE_HEADER",
           "BENCHMARK_HEADER", "CALIBRATION_HEADER", "parse_ladder"]

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 2, 3

BENCHMARK_HEADER = ["problem", "algorithm", "order", "diffusion", "abstol", "reltol", "error",
                    "fevals", "jacevals", "steps", "rejected", "chi2", "outcome", "wall_s"]
CALIBRATION_HEADER = ["problem", "algorithm", "order", "diffusion", "abstol", "reltol", "error",
                      "chi2", "band_low", "band_high", "within_band", "outcome"]
DIFFUSIONS = [m.value for m in DiffusionModel]


class UsageError(ValueError):
    pass


def format_float(x: float) -> str:
    """17 significant digits; parses back to the identical double."""
    return format(float(x), ".17g")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def _json_value(v):
    if isinstance(v, (float, np.floating)):
        return None if not math.isfinite(v) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _json_text(header, rows) -> str:
    records = [{k: _json_value(v) for k, v in zip(header, row)} for row in rows]
    return json.dumps(records, indent=1) + "\n"


def _emit(text: str, output: Optional[str]):
    if output is None or output == "-":
        sys.stdout.write(text)
        return
    with open(output, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _diagnose(**fields):
    sys.stderr.write(json.dumps({k: _json_value(v) for k, v in fields.items()}) + "\n")


def parse_ladder(text: str):
    """``"A:B"`` to decade-wise ``(tau_abs, tau_rel)`` pairs; a single value gives one pair."""
    parts = text.split(":")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise UsageError(f"malformed tolerance ladder {text!r}") from None
    if len(values) == 1:
        values = values * 2
    if len(values) != 2 or not all(v > 0 and math.isfinite(v) for v in values):
        raise UsageError(f"tolerance ladder must be A:B with positive A and B, got {text!r}")
    try:
        return tolerance_ladder(*values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odefilter",
        description="Calibrated adaptive probabilistic ODE solvers.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, ladder=False):
        p.add_argument("--problem", required=True, help=f"one of {', '.join(available_problems())}")
        p.add_argument("--variant", choices=["classic", "prey-decay"], default=None,
                       help="Lotka-Volterra right-hand side variant (default classic)")
        p.add_argument("--order", type=int, default=3, help="IWP order q in [1, 5] (default 3)")
        p.add_argument("--diffusion", default="tv", help=f"one of {', '.join(DIFFUSIONS)}")
        if ladder:
            p.add_argument("--tolerances", default="1e-4:1e-13",
                           help="decade ladder A:B of tau_abs, tau_rel = 1e3 * tau_abs")
        else:
            p.add_argument("--abstol", type=float, default=1e-6)
            p.add_argument("--reltol", type=float, default=1e-3)
        p.add_argument("--output", default=None, help="output file (default stdout)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")

    p = sub.add_parser("solve", help="single adaptive solve")
    common(p)
    p.add_argument("--algorithm", default="eks1", help=f"one of {', '.join(ALGORITHMS)}")

    p = sub.add_parser("benchmark", help="work-precision sweep")
    common(p, ladder=True)
    p.add_argument("--algorithms", default="eks1,dp5",
                   help="comma-separated list of ekf0, ekf1, eks0, eks1, dp5")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock seconds (otherwise nan, keeping output reproducible)")

    p = sub.add_parser("calibration-report", help="chi-square statistics over a ladder")
    common(p, ladder=True)
    p.add_argument("--algorithms", default="eks1", help="comma-separated algorithm list")

    p = sub.add_parser("list-problems", help="registry problems and parameters")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--output", default=None)
    return parser


@dataclasses.dataclass(frozen=True)
class RunConfig:
    command: str
    problem: object = None
    specs: tuple = ()
    cfg: Optional[ControllerConfig] = None
    ladder: tuple = ()
    output: Optional[str] = None
    format: str = "csv"
    jobs: int = 1
    timing: bool = False


def _spec(algorithm: str, q: int, diffusion: str) -> SolverSpec:
    if diffusion not in DIFFUSIONS:
        raise UsageError(f"unknown diffusion {diffusion!r}; choose from {', '.join(DIFFUSIONS)}")
    try:
        return SolverSpec.from_name(algorithm, q, diffusion)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


def validate(args) -> RunConfig:
    """Turn parsed flags into a :class:`RunConfig`; raises :class:`UsageError`."""
    if args.command == "list-problems":
        return RunConfig("list-problems", output=args.output, format=args.format)
    kwargs = {}
    if args.variant is not None:
        if args.problem != "lotka-volterra":
            raise UsageError("--variant applies to lotka-volterra only")
        kwargs["variant"] = args.variant
    try:
        problem = get_problem(args.problem, **kwargs)
    except ProblemError as exc:
        raise UsageError(str(exc)) from None
    if args.command == "solve":
        if not (args.abstol > 0 and args.reltol >= 0):
            raise UsageError("--abstol must be positive and --reltol non-negative")
        spec = _spec(args.algorithm, args.order, args.diffusion)
        cfg = ControllerConfig(tau_abs=args.abstol, tau_rel=args.reltol)
        return RunConfig("solve", problem, (spec,), cfg, output=args.output, format=args.format)

    names = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    if not names:
        raise UsageError("--algorithms is empty")
    if len(set(names)) != len(names):
        raise UsageError("--algorithms lists a duplicate")
    specs = []
    for name in names:
        if name == "dp5":
            if args.command != "benchmark":
                raise UsageError("dp5 has no posterior to calibrate")
            specs.append("dp5")
        else:
            specs.append(_spec(name, args.order, args.diffusion))
    ladder = tuple(parse_ladder(args.tolerances))
    jobs = getattr(args, "jobs", 1)
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")
    return RunConfig(args.command, problem, tuple(specs), ladder=ladder, output=args.output,
                     format=args.format, jobs=jobs, timing=getattr(args, "timing", False))


def _render(header, rows, fmt):
    return _csv_text(header, rows) if fmt == "csv" else _json_text(header, rows)


def _cmd_list(rc: RunConfig) -> int:
    rows = []
    for name in available_problems():
        p = get_problem(name)
        rows.append([name, p.d, format_float(p.t0), format_float(p.t1),
                     json.dumps(p.params, sort_keys=True)])
    _emit(_render(["problem", "d", "t0", "t1", "params"], rows, rc.format), rc.output)
    return EXIT_OK


def _cmd_solve(rc: RunConfig) -> int:
    spec = rc.specs[0]
    post, diag = solve_adaptive(rc.problem, spec, rc.cfg)
    if not diag.ok:
        _diagnose(command="solve", problem=rc.problem.name, algorithm=spec.name,
                  outcome=diag.outcome.value, message=diag.message,
                  t_reached=float(post.times[-1]), steps=post.stats["steps_accepted"],
                  rejected=post.stats["steps_rejected"])
        return EXIT_SOLVER
    means, stds = post.marginals()
    d = post.d
    header = ["t"] + [f"mean_{i}" for i in range(1, d + 1)] + [f"std_{i}" for i in range(1, d + 1)]
    rows = [[t, *m, *s] for t, m, s in zip(post.times, means, stds)]
    _emit(_render(header, rows, rc.format), rc.output)
    return EXIT_OK


def _cmd_benchmark(rc: RunConfig) -> int:
    records = work_precision(rc.problem, list(rc.specs), list(rc.ladder), jobs=rc.jobs)
    rows = [[r.problem, r.algorithm, r.order, r.diffusion, r.tau_abs, r.tau_rel,
             r.final_error, r.f_evals, r.jac_evals, r.steps, r.rejected, r.chi2, r.outcome,
             r.wall_time if rc.timing else math.nan] for r in records]
    _emit(_render(BENCHMARK_HEADER, rows, rc.format), rc.output)
    return EXIT_OK


def _cmd_calibration(rc: RunConfig) -> int:
    try:
        reference_solution(rc.problem, [rc.problem.t1])
    except ReferenceFailure as exc:
        _diagnose(command="calibration-report", problem=rc.problem.name, outcome="no-reference",
                  message=str(exc))
        return EXIT_SOLVER
    rows = []
    failed = False
    for spec in rc.specs:
        for tau_abs, tau_rel in rc.ladder:
            cfg = ControllerConfig(tau_abs=tau_abs, tau_rel=tau_rel)
            post, diag = solve_adaptive(rc.problem, spec, cfg)
            err = chi2 = lo = hi = math.nan
            within = False
            if diag.ok:
                ref = reference_solution(rc.problem, post.times)
                err = float(np.linalg.norm(post.means[-1] - ref[-1]))
                try:
                    rep = chi_square(post, ref)
                    chi2, lo, hi, within = rep.statistic, rep.band_low, rep.band_high, rep.within_band
                except Chi2Error:
                    pass
            else:
                failed = True
            rows.append([rc.problem.name, spec.name, spec.q, spec.diffusion.value, tau_abs,
                         tau_rel, err, chi2, lo, hi, within, diag.outcome.value])
    _emit(_render(CALIBRATION_HEADER, rows, rc.format), rc.output)
    if failed:
        _diagnose(command="calibration-report", problem=rc.problem.name,
                  outcome="partial-failure", message="one or more solves failed; see outcome column")
        return EXIT_SOLVER
    return EXIT_OK


_COMMANDS = {
    "solve": _cmd_solve,
    "benchmark": _cmd_benchmark,
    "calibration-report": _cmd_calibration,
    "list-problems": _cmd_list,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, validate every flag, then execute; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        rc = validate(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"odefilter: error: {exc}\n")
        return EXIT_USAGE
    with np.errstate(over="ignore", invalid="ignore"):
        return _COMMANDS[rc.command](rc)


def main() -> None:
    sys.exit(run())
