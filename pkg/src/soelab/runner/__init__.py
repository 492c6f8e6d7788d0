"""Experiment orchestration: config, artifact store, stages, reports and the CLI."""

from soelab.runner.config import DEFAULT_CONFIG_YAML, ConfigError, ExperimentConfig, config_from_dict, load_config
from soelab.runner.experiments import STAGES, Experiment, StageError
from soelab.runner.store import RunStore, StoreError

__all__ = ["DEFAULT_CONFIG_YAML", "ConfigError", "ExperimentConfig", "config_from_dict", "load_config", "STAGES",
           "Experiment", "StageError", "RunStore", "StoreError"]
