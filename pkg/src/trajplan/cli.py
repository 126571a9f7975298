"""``trajplan`` command line: plan, plot, benchmark, gradcheck, corpus.

Exit codes: 0 success, 1 planning or check failure, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import benchmark as bench
from .config import ConfigError, PlannerConfig, load_config
from .corpus import default_corpus
from .corridor import prepare_corridor
from .derivcheck import check_derivatives, random_points
from .files import (ScenarioFileError, dump_scenario, format_table, load_scenario,
                    load_warm_cache, read_table, save_warm_start, scenario_to_dict)
from .nlp import TrajectoryNlp
from .planner import initial_guess, plan
from .scenario import InvalidScenario

log = logging.getLogger("trajplan")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


def bundled_scenario_dir() -> Path:
    return Path(str(resources.files("trajplan") / "data" / "scenarios"))


def _json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _input_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_INPUT


def _config(args) -> PlannerConfig:
    return load_config(getattr(args, "config", None))


def _scenario_echo(sc) -> dict:
    """Scenario parameters with defaults applied (corridor geometry omitted)."""
    d = scenario_to_dict(sc)
    d.pop("corridor")
    return d


# -- plan -------------------------------------------------------------------------------


def cmd_plan(args) -> int:
    try:
        cfg = _config(args)
        scenario = load_scenario(args.scenario, cfg.weights)
        scenario.check()
        cache = load_warm_cache(args.warm_from) if args.warm_from else None
    except (ScenarioFileError, ConfigError, InvalidScenario) as exc:
        return _input_error(str(exc))
    except (OSError, KeyError, ValueError) as exc:
        return _input_error(f"cannot use warm start {args.warm_from}: {exc}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    smooth = not args.no_smooth
    outcome = plan(scenario, cache, smooth=smooth, config=cfg)
    traj, result, report = outcome
    if cache is not None and not outcome.warm_started:
        log.warning("warm start ignored: it was computed for a different road or horizon")

    (out / "trajectory.csv").write_text(format_table(traj))
    (out / "guess.csv").write_text(format_table(outcome.guess))
    _json(out / "validation.json", report.to_dict())
    telemetry = {
        "scenario": scenario.name,
        "status": result.status.value,
        "message": result.message,
        "success": outcome.ok,
        "warm_started": outcome.warm_started,
        "smoothed_corridor": smooth,
        "objective": result.objective,
        "max_violation": result.max_violation,
        "kkt_residual": result.kkt_residual,
        "outer_iterations": result.outer_iterations,
        "inner_iterations": result.inner_iterations,
        "wall_time_ms": result.wall_time_ms,
        "penalty": result.penalty,
        "history": result.history,
        "trace": result.trace,
        "config": cfg.to_dict(),
        "scenario_parameters": _scenario_echo(scenario),
    }
    _json(out / "telemetry.json", telemetry)
    if outcome.ok:
        save_warm_start(out / "warm_start.npz", scenario, traj, result.warm_start())
    if not args.no_plot:
        from .plots import plot_plan

        plot_plan(scenario, traj, out / "plan.svg", outcome.guess, outcome.corridor,
                  title=f"{scenario.name}: {result.status.value}")
    summary = (f"{scenario.name}: {result.status.value}, {result.inner_iterations} iterations "
               f"({result.outer_iterations} outer), {result.wall_time_ms:.1f} ms, "
               f"validation {'passed' if report.passed else 'FAILED'}")
    print(summary)
    if not outcome.ok:
        print(f"planning failed: {result.message or result.status.value}; see "
              f"{out / 'telemetry.json'}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# -- plot -------------------------------------------------------------------------------


def cmd_plot(args) -> int:
    from .plots import plot_plan

    try:
        cfg = _config(args)
        scenario = load_scenario(args.scenario, cfg.weights)
        traj = read_table(args.trajectory)
    except (ScenarioFileError, ConfigError) as exc:
        return _input_error(str(exc))
    except (OSError, ValueError) as exc:
        return _input_error(f"cannot read trajectory {args.trajectory}: {exc}")
    if traj.n_knots != scenario.n_knots:
        return _input_error(f"trajectory has {traj.n_knots} knots, scenario expects "
                            f"{scenario.n_knots}")
    plot_plan(scenario, traj, args.out, initial_guess(scenario, cfg.gains), title=scenario.name)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- benchmark ----------------------------------------------------------------------------


def _run_file(task):
    path, cycles, compare_cold, config_path = task
    cfg = load_config(config_path)
    return bench.replan_sequence(load_scenario(path, cfg.weights), cycles, cfg, compare_cold)


def cmd_benchmark(args) -> int:
    root = Path(args.scenario_dir) if args.scenario_dir else bundled_scenario_dir()
    files = sorted(root.glob("*.yaml")) if root.is_dir() else [root]
    if not files or not all(f.exists() for f in files):
        return _input_error(f"no scenario files found at {root}")
    try:
        cfg = _config(args)
        for f in files:
            load_scenario(f, cfg.weights)
    except (ScenarioFileError, ConfigError) as exc:
        return _input_error(str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(str(f), args.cycles, args.compare_cold, args.config) for f in files]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            runs = list(pool.map(_run_file, tasks))
    else:
        runs = [_run_file(t) for t in tasks]
    records = [r for run in runs for r in run]

    with open(out / "cycles.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(records[0].to_dict()))
        writer.writeheader()
        for r in records:
            writer.writerow(r.to_dict())
    hist = bench.histograms(records, bins=args.bins)
    with open(out / "histogram.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "series", "bin_low", "bin_high", "count"])
        for metric, (edges, counts) in hist.items():
            for series, c in sorted(counts.items()):
                for lo_, hi_, n in zip(edges[:-1], edges[1:], c):
                    writer.writerow([metric, series, f"{lo_:.6g}", f"{hi_:.6g}", int(n)])
    summary = bench.summarize(records)
    summary["per_scenario"] = {run[0].scenario: bench.summarize(run) for run in runs if run}
    summary["config"] = cfg.to_dict()
    _json(out / "summary.json", summary)
    if not args.no_plot:
        from .plots import plot_histograms

        plot_histograms(hist, out / "histogram.svg")
    wall = summary["wall_ms"]
    print(f"{summary['cycles']} cycles, {summary['failures']} failed "
          f"({100 * summary['failure_rate']:.2f}%); wall ms p50 {wall['p50']:.1f} "
          f"p95 {wall['p95']:.1f} max {wall['max']:.1f}; median iterations warm "
          f"{summary['warm_median_iterations']} cold {summary['cold_median_iterations']}")
    return EXIT_OK


# -- gradcheck ----------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    try:
        cfg = _config(args)
        scenario = load_scenario(args.scenario, cfg.weights)
    except (ScenarioFileError, ConfigError) as exc:
        return _input_error(str(exc))
    corridor = prepare_corridor(scenario.corridor, cfg.smoothing, not args.no_smooth)
    nlp = TrajectoryNlp(scenario, corridor)
    center = initial_guess(scenario, cfg.gains).to_vector()
    points = random_points(nlp, center, args.points, np.random.default_rng(args.seed))
    report = check_derivatives(nlp, points, threshold=args.threshold)
    print(f"max relative error {report.max_rel_error:.3e} over {report.points} points "
          f"(threshold {report.threshold:g})")
    print(f"worst entry: {report.worst_function} row {report.worst_row}, column "
          f"{report.worst_col}: {report.worst_description}")
    return EXIT_OK if report.passed else EXIT_FAIL


# -- corpus ---------------------------------------------------------------------------------


def cmd_corpus(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sc in default_corpus():
        (out / f"{sc.name}.yaml").write_text(dump_scenario(sc))
    print(f"wrote {len(default_corpus())} scenarios to {out}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajplan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--config", help="YAML overrides (default: $TRAJPLAN_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan one trajectory")
    p.add_argument("scenario")
    p.add_argument("-o", "--out", default="plan_out")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--cold", action="store_true", help="solve from the initial guess (default)")
    mode.add_argument("--warm-from", metavar="RESULT",
                      help="previous plan output directory or its warm_start.npz")
    p.add_argument("--no-smooth", action="store_true", help="skip boundary smoothing")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("plot", help="render a trajectory table over its scenario")
    p.add_argument("trajectory")
    p.add_argument("scenario")
    p.add_argument("-o", "--out", default="plan.svg")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("benchmark", help="replanning cycles over a scenario directory")
    p.add_argument("scenario_dir", nargs="?", help="directory of *.yaml (default: bundled corpus)")
    p.add_argument("--cycles", type=int, default=50)
    p.add_argument("-o", "--out", default="benchmark_out")
    p.add_argument("--compare-cold", action="store_true",
                   help="also solve every cycle without the warm start")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gradcheck", help="finite-difference check of all derivatives")
    p.add_argument("scenario")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--no-smooth", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("corpus", help="write the built-in scenarios as YAML")
    p.add_argument("-o", "--out", default="scenarios")
    p.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
