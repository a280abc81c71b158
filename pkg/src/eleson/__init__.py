"""Conveyor-state recognition from phone inertial and magnetic streams."""

from .core import ConveyorState, DataError, ConfigError, Dataset, InsSample, InsWindow, LabeledWindow
from .config import Architecture, TrainConfig
from .evidential import Decision, confidence, decide
from .model import ModelBundle

__version__ = "0.1.0"

__all__ = [
    "Architecture", "ConfigError", "ConveyorState", "DataError", "Dataset", "Decision", "InsSample",
    "InsWindow", "LabeledWindow", "ModelBundle", "TrainConfig", "confidence", "decide",
]
