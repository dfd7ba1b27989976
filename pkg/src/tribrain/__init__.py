"""Tick-based image classifier with perception, executive and auxiliary modulation systems."""

from .config import AblationConfig, ConfigError, ExperimentConfig, ModelConfig, PolicyConfig, TrainConfig
from .control import NumericalError, RunTrace, StopPolicy, run_ticks
from .model import TriBrainModel
from .numerics import KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "AblationConfig",
    "ConfigError",
    "ExperimentConfig",
    "KERNEL_BACKEND",
    "ModelConfig",
    "NumericalError",
    "PolicyConfig",
    "RunTrace",
    "StopPolicy",
    "TrainConfig",
    "TriBrainModel",
    "run_ticks",
]
