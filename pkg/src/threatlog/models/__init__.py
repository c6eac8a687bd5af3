"""Native classical baselines: random forest, gradient boosting, MLP."""

from .base import DivergenceError, TrainedModel
from .config import (
    ForestConfig,
    GBMConfig,
    GBM_PRESETS,
    MLPConfig,
    balanced_sample_weights,
)
from .forest import train_random_forest
from .gbm import train_gbm
from .io import load_model, save_model
from .mlp import MLPNetwork, train_mlp

__all__ = [
    "DivergenceError",
    "ForestConfig",
    "GBMConfig",
    "GBM_PRESETS",
    "MLPConfig",
    "MLPNetwork",
    "TrainedModel",
    "balanced_sample_weights",
    "load_model",
    "save_model",
    "train_gbm",
    "train_mlp",
    "train_random_forest",
]
