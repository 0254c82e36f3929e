"""Experiment harness: config parsing, sweep execution, presets, plots, CLI."""

from .config import ArchSpec, ConfigError, ExperimentSpec, parse_config
from .runner import RunResult, lr_sweep, run_experiment

__all__ = [
    "ArchSpec",
    "ConfigError",
    "ExperimentSpec",
    "parse_config",
    "RunResult",
    "run_experiment",
    "lr_sweep",
]
