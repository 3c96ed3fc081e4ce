"""Command line experiments: configuration, execution and reporting."""
from .config import EXPERIMENTS, ExperimentConfig
from .runner import RunResult, run

__all__ = ["EXPERIMENTS", "ExperimentConfig", "RunResult", "run"]
