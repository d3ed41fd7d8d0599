"""Command-line interface: simulate, solve, evaluate and batch pipeline runs.

Exit codes: 0 on success, 1 when a trial or computation fails (including
malformed input files), 2 on usage errors (bad arguments, missing files).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .io import ParseError, read_problem, read_solution, write_problem, write_solution
from .pipeline import (
    Alignment,
    InitializationStrategy,
    TrialReport,
    compute_ape,
    environment_extent,
    initialize_with_info,
    run_batch,
)
from .problem import ProblemError, evaluate_map_cost
from .refinement import refine
from .simulation import PRESETS, SimulationConfig, generate

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Invalid invocation (exit code 2)."""


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {path}")
    return p


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc}") from None
    return out


# subcommands ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config_path = _existing(args.config, "config")
    try:
        data = json.loads(config_path.read_text())
        if args.seed is not None:
            data["seed"] = args.seed
        config = SimulationConfig.from_dict(data)
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid config {config_path}: {exc}") from None
    out = _out_dir(args.out)
    problem, truth = generate(config)
    write_problem(out / "problem.txt", problem)
    write_solution(out / "truth.txt", truth.solution, problem.dim)
    _write_json(out / "config.json", config.to_dict())
    summary = {
        "poses": len(problem.pose_keys()),
        "landmarks": len(problem.landmark_variables),
        "relative_pose_edges": len(problem.relative_pose_edges),
        "range_edges": len(problem.range_edges),
        "ground_truth_cost": evaluate_map_cost(problem, truth.solution),
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_solve(args) -> int:
    problem = read_problem(_existing(args.problem, "problem"))
    truth = None
    if args.truth:
        _, truth = read_solution(_existing(args.truth, "truth"))
    strategy = InitializationStrategy(args.init)
    if strategy in (InitializationStrategy.GROUND_TRUTH, InitializationStrategy.ODOM_PERFECT):
        if truth is None:
            raise UsageError(f"--init {strategy.value} requires --truth")
    if args.extent is not None:
        extent = (np.zeros(problem.dim), np.full(problem.dim, float(args.extent)))
    else:
        extent = environment_extent(truth, problem.dim)
    out = _out_dir(args.out)
    rng = np.random.default_rng(args.seed)
    initial, info = initialize_with_info(problem, strategy, truth, rng, extent)
    final, ref = refine(problem, initial)
    write_solution(out / "initial.txt", initial, problem.dim)
    write_solution(out / "estimate.txt", final, problem.dim)
    report = {
        "strategy": strategy.value,
        "score_objective": info.score_objective,
        "solver_status": info.solver_status,
        "reduced_accuracy": info.reduced_accuracy,
        "degenerate": info.degenerate,
        "fallback": info.fallback,
        "times": info.times,
        "refinement": ref.to_dict(),
    }
    if info.projection is not None:
        report["min_determinant"] = info.projection.min_determinant
        _write_csv(
            out / "determinants.csv",
            ["pose", "determinant"],
            [(str(k), v) for k, v in info.projection.determinants.items()],
        )
    _write_csv(out / "cost_trace.csv", ["iteration", "cost"], enumerate(ref.cost_trace))
    if truth is not None:
        ape = compute_ape(final, truth)
        report["final_ape"] = {k: v for k, v in vars(ape).items() if k not in ("errors", "keys")}
        _write_csv(out / "pose_errors.csv", ["pose", "error"], zip(ape.keys, ape.errors))
    _write_json(out / "report.json", report)
    print(json.dumps({k: report[k] for k in ("strategy", "score_objective", "degenerate")}
                     | {"final_cost": ref.final_cost}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    dim_e, estimate = read_solution(_existing(args.estimate, "estimate"))
    dim_t, truth = read_solution(_existing(args.truth, "truth"))
    if dim_e != dim_t:
        raise ProblemError(f"estimate is {dim_e}-D but truth is {dim_t}-D")
    alignment = Alignment.NONE if args.no_align else Alignment.RIGID_UMEYAMA
    ape = compute_ape(estimate, truth, alignment)
    summary = {k: v for k, v in vars(ape).items() if k not in ("errors", "keys")}
    if args.out:
        out = _out_dir(args.out)
        _write_json(out / "ape.json", summary)
        _write_csv(out / "pose_errors.csv", ["pose", "error"], zip(ape.keys, ape.errors))
    print(json.dumps(summary))
    return EXIT_OK


def _batch_rows(reports: list[TrialReport]):
    ape, traces, errors, dets = [], [], [], []
    for r in reports:
        for name, s in r.strategies.items():
            ape.append([
                r.trial_id, r.seed, name,
                s.initial_ape.rmse if s.initial_ape else "",
                s.final_ape.rmse if s.final_ape else "",
                s.final_ape.median if s.final_ape else "",
                s.initial_cost if s.initial_cost is not None else "",
                s.final_cost if s.final_cost is not None else "",
                int(s.degenerate), s.fallback or "", s.error or "",
            ])
            if s.refinement:
                traces += [[r.trial_id, name, i, c] for i, c in enumerate(s.refinement.cost_trace)]
            if s.final_ape:
                errors += [[r.trial_id, name, k, e] for k, e in zip(s.final_ape.keys, s.final_ape.errors)]
        dets += [[r.trial_id, k, v] for k, v in r.determinants.items()]
    return ape, traces, errors, dets


def _median_summary(reports: list[TrialReport]) -> dict:
    out = {}
    names = {n for r in reports for n in r.strategies}
    for name in sorted(names):
        vals = [
            r.strategies[name].final_ape.rmse
            for r in reports
            if name in r.strategies and r.strategies[name].final_ape is not None
        ]
        out[name] = float(np.median(vals)) if vals else None
    return out


def cmd_pipeline(args) -> int:
    for flag in ("robots", "poses", "trials", "workers"):
        if getattr(args, flag) < 1:
            raise UsageError(f"--{flag} must be at least 1")
    if args.beacons < 0:
        raise UsageError("--beacons must be nonnegative")
    try:
        config = SimulationConfig(
            dim=args.dim,
            num_robots=args.robots,
            num_beacons=args.beacons,
            poses_per_robot=args.poses,
            grid_extent=args.grid_extent,
            noise=PRESETS[args.preset],
            seed=args.seed,
        )
        strategies = [InitializationStrategy(s) for s in args.strategies.split(",")]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    reports = run_batch(config, args.trials, strategies, workers=args.workers)
    for r in reports:
        (out / f"trial_{r.trial_id:03d}.json").write_text(r.to_json() + "\n")
    ape, traces, errors, dets = _batch_rows(reports)
    _write_csv(
        out / "ape.csv",
        ["trial", "seed", "strategy", "initial_rmse", "final_rmse", "final_median",
         "initial_cost", "final_cost", "degenerate", "fallback", "error"],
        ape,
    )
    _write_csv(out / "cost_traces.csv", ["trial", "strategy", "iteration", "cost"], traces)
    _write_csv(out / "pose_errors.csv", ["trial", "strategy", "pose", "error"], errors)
    _write_csv(out / "determinants.csv", ["trial", "pose", "determinant"], dets)
    failed = [r.trial_id for r in reports if r.failed]
    summary = {
        "config": config.to_dict(),
        "trials": len(reports),
        "failed_trials": failed,
        "lower_bound_violations": [r.trial_id for r in reports if not r.lower_bound_ok],
        "degenerate_trials": [
            r.trial_id for r in reports if any(s.degenerate for s in r.strategies.values())
        ],
        "median_final_rmse": _median_summary(reports),
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary["median_final_rmse"]))
    return EXIT_FAILURE if failed else EXIT_OK


# parser ------------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse's default already exits 2; keep the message format
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scoreslam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a problem and its ground truth")
    p.add_argument("--config", required=True, help="JSON simulation configuration")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="initialize and refine one problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--init", required=True, choices=[s.value for s in InitializationStrategy])
    p.add_argument("--truth", default=None, help="ground truth (required for gt and odom-p)")
    p.add_argument("--seed", type=int, default=0, help="seed for random initial values")
    p.add_argument("--extent", type=float, default=None,
                   help="side of the box [0, extent]^d for random initial values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="absolute pose error of an estimate")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--no-align", action="store_true", help="skip rigid alignment")
    p.add_argument("--out", default=None, help="optional directory for JSON/CSV output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="batch of simulated trials")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--robots", type=int, required=True)
    p.add_argument("--beacons", type=int, required=True)
    p.add_argument("--poses", type=int, required=True, help="poses per robot")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--dim", type=int, default=2, choices=(2, 3))
    p.add_argument("--grid-extent", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--strategies", default=",".join(s.value for s in InitializationStrategy),
                   help="comma-separated subset of strategies")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"scoreslam: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ProblemError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"scoreslam: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
