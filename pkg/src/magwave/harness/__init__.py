"""Command line harness: configuration, experiments and persisted outputs."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]
