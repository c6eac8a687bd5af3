"""Shared trained-model wrapper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch


class LayoutError(ValueError):
    """Input matrix does not match the layout the model was trained on."""


@dataclass
class TrainedModel:
    """Immutable fitted model: probabilities always sum to 1 per row and
    argmax ties resolve to the first class in vocabulary order."""

    kind: str
    classes: tuple[str, ...]
    config: dict
    loss_trace: list[float]
    n_features: int
    impl: object
    column_names: tuple[str, ...] | None = None

    def _check_layout(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise LayoutError(
                f"expected {self.n_features} feature columns, got {X.shape[1] if X.ndim == 2 else X.shape}"
            )
        return X

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = self._check_layout(X)
        return self.impl.predict_proba(X)

    def predict(self, X: np.ndarray) -> list[str]:
        proba = self.predict_proba(X)
        return [self.classes[i] for i in np.argmax(proba, axis=1)]
