"""SPRMamba: selective state-space and attention blocks for surgical phase recognition."""

from .data import FeatureSequence, SynthConfig, gen_synthetic, read_features, write_features
from .estimator import SPRMambaClassifier
from .exceptions import (ConfigurationError, DataError, DimensionError, DomainError, FormatError, NumericalError,
                         SprMambaError, UsageError)
from .metrics import MetricsReport, evaluate, frame_accuracy, phase_prf_jaccard, relaxed_eval
from .model import ModelConfig, SPRMamba, build_model, param_count
from .tensor import Tensor, no_grad
from .training import TrainConfig, TrainHistory, train

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DataError", "DimensionError", "DomainError", "FeatureSequence", "FormatError",
    "MetricsReport", "ModelConfig", "NumericalError", "SPRMamba", "SPRMambaClassifier", "SprMambaError",
    "SynthConfig", "Tensor", "TrainConfig", "TrainHistory", "UsageError", "build_model", "evaluate",
    "frame_accuracy", "gen_synthetic", "no_grad", "param_count", "phase_prf_jaccard", "read_features",
    "relaxed_eval", "train", "write_features",
]
