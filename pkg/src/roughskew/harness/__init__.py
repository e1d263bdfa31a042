"""Configuration, experiment commands and the command-line front end."""
from .config import ConfigError, ExperimentConfig, format_config, load_config, parse_config
from .runner import (
    RunReport,
    cmd_dynamic_consistency,
    cmd_price,
    cmd_simulate_fbm,
    cmd_skew_term_structure,
)
from .validate import cmd_validate

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunReport",
    "cmd_dynamic_consistency",
    "cmd_price",
    "cmd_simulate_fbm",
    "cmd_skew_term_structure",
    "cmd_validate",
    "format_config",
    "load_config",
    "parse_config",
]
