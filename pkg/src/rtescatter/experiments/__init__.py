"""Configuration, drivers and CLI for the reconstruction experiments."""
from .config import ExperimentConfig, load_config, parse_config
from .drivers import DRIVERS, RunContext

__all__ = ["ExperimentConfig", "load_config", "parse_config", "DRIVERS", "RunContext"]
