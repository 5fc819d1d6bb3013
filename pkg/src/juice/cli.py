"""Command-line entry point.

Subcommands::

    juice run  --config exp.json [--seed N] [--out DIR] [--trials N] [--algo LIST] [--trace]
    juice grid --config exp.json --grid grid.json
    juice demo [--seed N] [--out DIR] [--trials N]

Exit status: 0 on success, 1 on a configuration error, 2 when the
experiment itself fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError
from .harness import (ALGORITHMS, ExperimentConfig, ExperimentError, emit_outputs,
                      grid_search, run_experiment)
from .model import ScenarioConfig

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2

DEMO_TAU_P = [12, 16, 20, 24, 28]


def _build_parser():
    ap = argparse.ArgumentParser(prog="juice", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a Monte-Carlo experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, help="override master_seed")
    run.add_argument("--out", help="override output_dir")
    run.add_argument("--trials", type=int, help="override the trial count")
    run.add_argument("--algo", help="comma-separated subset of " + ",".join(ALGORITHMS))
    run.add_argument("--trace", action="store_true", help="write per-iteration traces")
    run.add_argument("--workers", type=int, help="worker processes")
    run.add_argument("--time", action="store_true",
                     help="record wall time (makes the CSV run-dependent)")

    grid = sub.add_parser("grid", help="grid-search algorithm parameters on tuning seeds")
    grid.add_argument("--config", required=True)
    grid.add_argument("--grid", required=True, help="JSON object {algorithm: {param: [values]}}")
    grid.add_argument("--out", help="override output_dir")
    grid.add_argument("--trials", type=int)

    demo = sub.add_parser("demo", help="pilot-length sweep on the default clustered scenario")
    demo.add_argument("--seed", type=int, default=0)
    demo.add_argument("--out", default="demo_results")
    demo.add_argument("--trials", type=int, default=10)
    return ap


def _apply_overrides(cfg: ExperimentConfig, args):
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    if getattr(args, "algo", None):
        names = [a.strip() for a in args.algo.split(",") if a.strip()]
        cfg.algorithms = {a: cfg.algorithms.get(a, {}) for a in names}
    if getattr(args, "trace", False):
        cfg.trace = True
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "time", False):
        cfg.record_time = True
    cfg.validate()
    return cfg


def format_table(table):
    head = ["sweep", "algorithm", "fail", "SRR", "SRR(fa)", "NMSE[dB]", "iters"]
    lines = ["  ".join(f"{h:>14}" for h in head)]
    for r in table.rows:
        vals = [r["sweep_value"] if r["sweep_value"] is not None else "-", r["algorithm"],
                r["failures"], f"{r['mean_srr']:.3f}", f"{r['mean_srr_fa']:.3f}",
                f"{r['nmse_db']:.2f}", f"{r['mean_iters']:.1f}"]
        lines.append("  ".join(f"{str(v):>14}" for v in vals))
    return "\n".join(lines)


def _check_table(table):
    dead = [r for r in table.rows if r["failures"] >= r["trials"]]
    if dead:
        cells = ", ".join(f"{r['algorithm']}@{r['sweep_value']}" for r in dead)
        raise ExperimentError(f"every trial failed for: {cells}")


def cmd_run(args):
    cfg = _apply_overrides(ExperimentConfig.from_file(args.config), args)
    table = run_experiment(cfg)
    paths = emit_outputs(table, cfg.output_dir, cfg)
    print(format_table(table))
    for w in table.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print("wrote " + ", ".join(str(p) for p in paths))
    _check_table(table)


def cmd_grid(args):
    cfg = _apply_overrides(ExperimentConfig.from_file(args.config), args)
    try:
        with open(args.grid) as fh:
            grid = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read grid {args.grid}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"grid {args.grid} is not valid JSON: {exc}") from exc
    if not isinstance(grid, dict) or not grid:
        raise ConfigurationError("grid must be a non-empty JSON object")
    best, rows = grid_search(cfg, grid)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["algorithm,params,nmse,nmse_db,mean_srr"]
    for r in rows:
        lines.append(",".join([r["algorithm"], json.dumps(r["params"], sort_keys=True).replace(",", ";"),
                               repr(r["nmse"]), repr(r["nmse_db"]), repr(r["mean_srr"])]))
    (out / "grid.csv").write_text("\n".join(lines) + "\n")
    (out / "best.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    for r in rows:
        print(f"{r['algorithm']:>14}  {json.dumps(r['params'], sort_keys=True)}  "
              f"NMSE {r['nmse_db']:.2f} dB  SRR {r['mean_srr']:.3f}")
    print("best: " + json.dumps(best, sort_keys=True))


def pilot_saving_report(table, reference="irw_l21", target="emep", tau_ref=24):
    """Pilot length ``target`` needs to match ``reference``'s SRR at ``tau_ref``."""
    xs, ref = table.series(reference, "mean_srr")
    _, tgt = table.series(target, "mean_srr")
    if tau_ref not in xs:
        return None
    goal = ref[xs.index(tau_ref)]
    need = None
    for (x0, y0), (x1, y1) in zip(zip(xs, tgt), list(zip(xs, tgt))[1:]):
        if y0 >= goal:
            need = x0
            break
        if y1 >= goal:
            need = x0 + (goal - y0) / (y1 - y0) * (x1 - x0)
            break
    gap = table.cell(tau_ref, reference)["nmse_db"] - table.cell(tau_ref, target)["nmse_db"]
    return {"srr_goal": goal, "tau_needed": need,
            "pilot_saving": None if need is None else 1.0 - need / tau_ref, "nmse_gap_db": gap}


def cmd_demo(args):
    cfg = ExperimentConfig(scenario=ScenarioConfig(), sweep_axis="tau_p",
                           sweep_values=list(DEMO_TAU_P), trials=args.trials,
                           master_seed=args.seed, output_dir=args.out)
    table = run_experiment(cfg)
    paths = emit_outputs(table, cfg.output_dir, cfg)
    print(format_table(table))
    rep = pilot_saving_report(table)
    if rep is not None:
        saving = "n/a" if rep["pilot_saving"] is None else f"{100 * rep['pilot_saving']:.0f}%"
        print(f"EM-EP reaches the IRW-l2,1 SRR at tau_p=24 ({rep['srr_goal']:.3f}) with "
              f"tau_p={'n/a' if rep['tau_needed'] is None else format(rep['tau_needed'], '.1f')}"
              f" (pilot saving {saving}); NMSE gap at tau_p=24: {rep['nmse_gap_db']:.1f} dB")
    print("wrote " + ", ".join(str(p) for p in paths))
    _check_table(table)


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "grid": cmd_grid, "demo": cmd_demo}
    try:
        with np.errstate(all="ignore"):
            handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentError, OSError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
