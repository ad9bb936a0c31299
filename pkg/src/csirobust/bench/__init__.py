"""Experiment harness: config parsing, seeded grid runs and reports."""

from .config import ConfigError, ExperimentConfig, parse_config, parse_config_text
from .report import emit_report, read_report, summarize
from .runner import FIELDS, ReportRecord, SeedRun, run_experiment, stage_seed

__all__ = [
    "ConfigError", "ExperimentConfig", "FIELDS", "ReportRecord", "SeedRun", "emit_report",
    "parse_config", "parse_config_text", "read_report", "run_experiment", "stage_seed",
    "summarize",
]
