"""Experiment harness: synthetic data, PPM I/O, configs, reports and the CLI."""
from .config import ExperimentConfig
from .data import PatchDataset, generate_synthetic, load_directory, split
from .experiment import run_experiment
from .report import ReportRow, emit_report, parse_report

__all__ = ["ExperimentConfig", "PatchDataset", "ReportRow", "emit_report", "generate_synthetic",
           "load_directory", "parse_report", "run_experiment", "split"]
