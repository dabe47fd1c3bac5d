"""Bi-LSTM variational autoencoder for azimuthal thermoacoustic mode recognition."""

__version__ = "0.1.0"

from .exceptions import (
    ConfigError,
    DataError,
    DatasetNotFoundError,
    DimensionError,
    FlameModesError,
    FormatError,
    HyperparameterMismatch,
    InputError,
    NumericError,
    TrainingError,
)
from .records import ModeLabel, OperatingPoint, PressureRecord
from .pipeline import TrainConfig, train
from .analysis import LatentCloud, analyze, classify, mode_diagnostics
from .estimators import BiLSTMVAE, LatentModeClassifier

__all__ = [
    "BiLSTMVAE",
    "ConfigError",
    "DataError",
    "DatasetNotFoundError",
    "DimensionError",
    "FlameModesError",
    "FormatError",
    "HyperparameterMismatch",
    "InputError",
    "LatentCloud",
    "LatentModeClassifier",
    "ModeLabel",
    "NumericError",
    "OperatingPoint",
    "PressureRecord",
    "TrainConfig",
    "TrainingError",
    "analyze",
    "classify",
    "mode_diagnostics",
    "train",
]
