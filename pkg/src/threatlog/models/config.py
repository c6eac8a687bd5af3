"""Training configurations and the presets the baselines emulate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 < value <= 1.0:
        raise ValueError(f"{name} must be in (0, 1], got {value}")


@dataclass(frozen=True)
class ForestConfig:
    n_estimators: int = 200
    max_depth: int | None = None  # None = unlimited
    max_features: str | int = "sqrt"
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class GBMConfig:
    rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int | None = 6
    max_leaves: int | None = None  # leaf-limited growth when set
    min_data_in_leaf: int = 1
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0
    reg_lambda: float = 1.0
    class_weight: str | None = None  # None | "balanced"
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        _check_fraction("subsample", self.subsample)
        _check_fraction("colsample", self.colsample)
        if self.max_depth is None and self.max_leaves is None:
            raise ValueError("one of max_depth or max_leaves must be set")


GBM_PRESETS: dict[str, GBMConfig] = {
    "xgb_like": GBMConfig(
        rounds=100,
        learning_rate=0.1,
        max_depth=6,
        subsample=0.8,
        colsample=0.8,
        seed=42,
    ),
    "lgbm_like": GBMConfig(
        rounds=300,
        learning_rate=0.05,
        max_depth=None,
        max_leaves=50,
        min_data_in_leaf=10,
        subsample=0.7,
        colsample=0.7,
        class_weight="balanced",
        seed=42,
    ),
}


@dataclass(frozen=True)
class MLPConfig:
    hidden: tuple[int, ...] = (256, 128, 64)
    dropout: float = 0.3
    batchnorm: bool = True
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 100
    bn_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden layer widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def balanced_sample_weights(y: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-sample weights N / (n_classes * n_c): every class then carries
    the same total weight."""
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    n = float(len(y))
    weights = np.zeros(n_classes, dtype=np.float64)
    present = counts > 0
    weights[present] = n / (n_classes * counts[present])
    return weights[y]
