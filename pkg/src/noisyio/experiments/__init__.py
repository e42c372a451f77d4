"""Configured experiments, metrics, plots and reports."""

from .config import EXPERIMENTS, ExperimentConfig, parse_baseline
from .metrics import coverage, relative_l2
from .pinn import PinnResult, PinnSettings, train_pinn_deterministic
from .plots import emit_plot, render_svg
from .report import RowResult, RunReport, emit_report, load_reports, render_table
from .runner import read_summary, run_experiment, train_operator_from_config

__all__ = [
    "EXPERIMENTS", "ExperimentConfig", "parse_baseline", "coverage", "relative_l2", "PinnResult",
    "PinnSettings", "train_pinn_deterministic", "emit_plot", "render_svg", "RowResult", "RunReport",
    "emit_report", "load_reports", "render_table", "read_summary", "run_experiment",
    "train_operator_from_config",
]
