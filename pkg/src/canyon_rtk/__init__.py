"""GNSS-RTK positioning aided by LiDAR virtual satellites and map-based NLOS exclusion.

The package holds the measurement models, the sliding-window factor graph,
integer ambiguity resolution, a deterministic urban-canyon simulator and the
``canyon-rtk`` command line.
"""
from .errors import CanyonRtkError, DatasetError
from .metrics import MetricsReport, compute_metrics, emit_reports
from .pipeline import MODES, RunConfig, RunResult, load_run_config, run_pipeline

__version__ = "0.1.0"

__all__ = ["CanyonRtkError", "DatasetError", "MODES", "MetricsReport", "RunConfig", "RunResult",
           "compute_metrics", "emit_reports", "load_run_config", "run_pipeline"]
