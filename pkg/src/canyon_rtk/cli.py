"""Command-line entry point: ``canyon-rtk {simulate,run,evaluate,adop-sweep}``.

Exit status is 0 on success, 2 when a dataset or configuration file is
missing or malformed and 3 when the estimator fails numerically.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from .errors import (AllExcluded, CanyonRtkError, DatasetError, InconsistentTimestamps,
                     NoOverlap, NotPositiveDefinite, SingularSystem)
from .io import load_dataset, read_rows, read_trajectory, read_truth, write_rows
from .metrics import compute_metrics, emit_reports, summary_rows
from .pipeline import MODES, load_run_config, run_metrics, run_pipeline, write_run_outputs

EXIT_OK = 0
EXIT_DATASET = 2
EXIT_SOLVER = 3

log = logging.getLogger("canyon_rtk")


def _print_summary(report, baseline=None, out=None):
    out = out or sys.stdout
    for name, value in summary_rows(report, baseline):
        out.write(f"{name:<11s} {value:10.4f}\n")


def _scenario(arg):
    from . import sim
    if os.path.exists(arg):
        try:
            return sim.load_scenario(arg)
        except (TypeError, ValueError, KeyError) as exc:
            raise DatasetError(str(exc), arg) from None
    presets = {"canyon": sim.canyon, "open_sky": sim.open_sky}
    if arg in presets:
        return presets[arg]()
    raise DatasetError("file not found (and not a preset name: canyon, open_sky)", arg)


def cmd_simulate(args):
    from .sim import generate_dataset
    scenario = _scenario(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    generate_dataset(scenario, args.outdir)
    print(f"wrote {scenario.name} dataset (seed {scenario.seed}) to {args.outdir}")
    return EXIT_OK


def _config(args):
    cfg = load_run_config(args.config)
    if getattr(args, "mode", None):
        cfg = dataclasses.replace(cfg, mode=args.mode)
    if getattr(args, "output", None):
        cfg = dataclasses.replace(cfg, output=args.output)
    if cfg.output is None:
        cfg = dataclasses.replace(cfg, output=os.path.join(os.path.dirname(
            os.path.abspath(args.config)), f"results_{cfg.mode}"))
    return cfg


def cmd_run(args):
    cfg = _config(args)
    ds = load_dataset(cfg.dataset)
    result = run_pipeline(cfg, ds)
    baseline = None
    if args.compare and cfg.mode != "rtk_only":
        base_cfg = dataclasses.replace(cfg, mode="rtk_only", adop_weights=[])
        baseline = run_metrics(run_pipeline(base_cfg, ds), ds.truth)
    report = write_run_outputs(result, cfg.output, ds.truth, baseline)
    n_fixed = sum(e.status == "fixed" for e in result.epochs)
    print(f"{cfg.mode}: {len(result.epochs)} epochs, {len(result.solved)} solved, "
          f"{n_fixed} fixed; outputs in {cfg.output}")
    if report is not None:
        _print_summary(report, baseline)
    return EXIT_OK


def _statuses_for(traj_path, status_path):
    """Per-epoch times, positions and statuses from a run's output files."""
    t, p, _ = read_trajectory(traj_path)
    if status_path is None:
        return t, p, None
    header, rows = read_rows(status_path)
    if header[:2] != ["timestamp", "status"]:
        raise DatasetError(f"unexpected header {header}", status_path, 1)
    times, positions, statuses = [], [], []
    for lineno, row in rows:
        try:
            ts = float(row[0])
        except (ValueError, IndexError):
            raise DatasetError("bad timestamp", status_path, lineno) from None
        s = row[1]
        pos = np.full(3, np.nan)
        if s != "none":
            j = np.flatnonzero(np.abs(t - ts) < 1e-6)
            if j.size == 0:
                raise DatasetError(f"solved epoch {ts} missing from {traj_path}", status_path,
                                   lineno)
            pos = p[j[0]]
        times.append(ts)
        positions.append(pos)
        statuses.append(s)
    return np.array(times), np.array(positions).reshape(-1, 3), statuses


def _default_status(traj_path, given):
    if given:
        return given
    guess = os.path.join(os.path.dirname(os.path.abspath(traj_path)), "status.csv")
    return guess if os.path.exists(guess) else None


def cmd_evaluate(args):
    tt, tp, _, _ = read_truth(args.truth)
    t, p, s = _statuses_for(args.estimate, _default_status(args.estimate, args.status))
    report = compute_metrics(t, p, tt, tp, s)
    baseline = None
    if args.baseline:
        bt, bp, bs = _statuses_for(args.baseline, _default_status(args.baseline, None))
        baseline = compute_metrics(bt, bp, tt, tp, bs)
    if args.output:
        emit_reports(args.output, report, baseline=baseline)
    _print_summary(report, baseline)
    return EXIT_OK


def _weights(text):
    try:
        w = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be comma separated numbers: {text!r}")
    if not w or any(v < 0 for v in w):
        raise argparse.ArgumentTypeError("weights must be non-negative and non-empty")
    return w


def cmd_adop_sweep(args):
    cfg = _config(args)
    if cfg.mode == "rtk_only":
        raise DatasetError("the ADOP sweep needs a fusion mode", args.config)
    cfg = dataclasses.replace(cfg, adop_weights=args.weights)
    ds = load_dataset(cfg.dataset, with_truth=False)
    result = run_pipeline(cfg, ds)
    os.makedirs(cfg.output, exist_ok=True)
    path = os.path.join(cfg.output, "adop_sweep.csv")
    write_rows(path, ["timestamp", "vs_weight", "adop"], result.adop_sweep)
    for w in args.weights:
        vals = np.array([a for _, wi, a in result.adop_sweep if wi == w], dtype=float)
        mean = float(np.nanmean(vals)) if vals.size and np.isfinite(vals).any() else float("nan")
        print(f"weight {w:4.2f}  mean ADOP {mean:.5f}  ({vals.size} epochs)")
    print(f"wrote {path}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="canyon-rtk",
                                description="LiDAR and IMU aided GNSS-RTK in urban canyons.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("scenario", help="scenario YAML file, or a preset name (canyon, open_sky)")
    s.add_argument("outdir")
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="run the positioning pipeline")
    r.add_argument("config", help="run configuration YAML")
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--output", help="output directory (overrides the config)")
    r.add_argument("--compare", action="store_true",
                   help="also run rtk_only to fill the IMPR. rows")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="score a trajectory against truth")
    e.add_argument("estimate", help="trajectory.csv of a run")
    e.add_argument("truth", help="truth.csv of the dataset")
    e.add_argument("--status", help="status.csv (default: next to the trajectory)")
    e.add_argument("--baseline", help="rtk_only trajectory.csv for the IMPR. rows")
    e.add_argument("--output", help="directory for errors.csv and summary.csv")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("adop-sweep", help="ADOP per epoch for several VS weights")
    a.add_argument("config", help="run configuration YAML")
    a.add_argument("--weights", type=_weights, default=[0.0, 0.5, 1.0, 1.5, 2.0, 2.5])
    a.add_argument("--mode", choices=MODES[1:])
    a.add_argument("--output", help="output directory (overrides the config)")
    a.set_defaults(func=cmd_adop_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DatasetError, InconsistentTimestamps, NoOverlap) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except (SingularSystem, NotPositiveDefinite, AllExcluded, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CanyonRtkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
