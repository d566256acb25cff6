"""Accuracy and availability statistics and the report files behind them."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import IoError, NoOverlap
from .io import write_rows

MATCH_TOLERANCE = 0.05
SUMMARY_ROWS = ["2D MEAN", "2D MAX", "2D STD", "2D IMPR.", "3D MEAN", "3D MAX", "3D STD",
                "3D IMPR.", "FIXED RATE", "AVAIL."]


@dataclass
class MetricsReport:
    mean_2d: float
    max_2d: float
    std_2d: float
    mean_3d: float
    max_3d: float
    std_3d: float
    fix_rate: float        # percent of solved epochs
    availability: float    # percent of all epochs
    n_epochs: int
    n_solved: int
    n_fixed: int
    trace: list = field(default_factory=list)   # (t, status, err_2d, err_3d)

    def improvement(self, baseline: "MetricsReport"):
        """Percent reduction of the 2D and 3D mean errors relative to ``baseline``."""
        def pct(a, b):
            return 100.0 * (b - a) / b if b > 0 else float("nan")
        return pct(self.mean_2d, baseline.mean_2d), pct(self.mean_3d, baseline.mean_3d)


def compute_metrics(times, positions, truth_times, truth_positions, statuses=None,
                    tolerance=MATCH_TOLERANCE):
    """Error statistics of an estimated trajectory against truth.

    ``statuses`` has one entry per epoch (``fixed``, ``float`` or ``none``);
    ``positions`` rows of ``none`` epochs are ignored. Without statuses every
    row counts as a float solution. Epochs are paired with the nearest truth
    sample when it lies within ``tolerance`` seconds.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    truth_times = np.asarray(truth_times, dtype=float).reshape(-1)
    truth_positions = np.asarray(truth_positions, dtype=float).reshape(-1, 3)
    if statuses is None:
        statuses = ["float"] * len(times)
    statuses = list(statuses)
    if len(statuses) != len(times):
        raise ValueError("one status per epoch is required")
    if len(truth_times) == 0 or len(times) == 0:
        raise NoOverlap("empty trajectory")
    order = np.argsort(truth_times, kind="stable")
    tt, tp = truth_times[order], truth_positions[order]

    trace = []
    for t, p, s in zip(times, positions, statuses):
        if s == "none":
            continue
        i = int(np.searchsorted(tt, t))
        cand = [j for j in (i - 1, i) if 0 <= j < len(tt)]
        j = min(cand, key=lambda j: abs(tt[j] - t))
        if abs(tt[j] - t) > tolerance:
            continue
        d = p - tp[j]
        trace.append((float(t), s, float(np.hypot(d[0], d[1])), float(np.linalg.norm(d))))
    if not trace:
        raise NoOverlap(f"no estimate lies within {tolerance} s of a truth sample")
    e2 = np.array([r[2] for r in trace])
    e3 = np.array([r[3] for r in trace])
    n_solved = sum(s != "none" for s in statuses)
    n_fixed = sum(s == "fixed" for s in statuses)
    return MetricsReport(
        mean_2d=float(e2.mean()), max_2d=float(e2.max()), std_2d=float(e2.std()),
        mean_3d=float(e3.mean()), max_3d=float(e3.max()), std_3d=float(e3.std()),
        fix_rate=100.0 * n_fixed / n_solved, availability=100.0 * n_solved / len(statuses),
        n_epochs=len(statuses), n_solved=n_solved, n_fixed=n_fixed, trace=trace)


def summary_rows(report: MetricsReport, baseline: MetricsReport = None):
    imp2 = imp3 = float("nan")
    if baseline is not None:
        imp2, imp3 = report.improvement(baseline)
    values = [report.mean_2d, report.max_2d, report.std_2d, imp2, report.mean_3d, report.max_3d,
              report.std_3d, imp3, report.fix_rate, report.availability]
    return list(zip(SUMMARY_ROWS, values))


def emit_reports(outdir, report: MetricsReport = None, skyplot=(), adop_sweep=(), fixes=(),
                 baseline: MetricsReport = None):
    """Write the error trace, ADOP sweep, fixes, skyplot and summary tables.

    A missing ``report`` (nothing solved or no truth) leaves the trace and
    summary with their headers only. Returns the written paths.
    """
    files = {
        "errors.csv": (["timestamp", "status", "error_2d", "error_3d"],
                       report.trace if report is not None else []),
        "adop_sweep.csv": (["timestamp", "vs_weight", "adop"], adop_sweep),
        "fixes.csv": (["timestamp", "x", "y", "z"], ([t, *p] for t, p in fixes)),
        "skyplot.csv": (["timestamp", "satellite", "azimuth_deg", "elevation_deg", "label"],
                        skyplot),
        "summary.csv": (["metric", "value"],
                        summary_rows(report, baseline) if report is not None else []),
    }
    paths = []
    try:
        os.makedirs(outdir, exist_ok=True)
        for name, (header, rows) in files.items():
            path = os.path.join(outdir, name)
            write_rows(path, header, rows)
            paths.append(path)
    except OSError as exc:
        raise IoError(f"cannot write reports to {outdir}: {exc}") from exc
    return paths
