"""Random forest with seeded, order-independent bootstrap sampling.

Rows are put into a canonical order (lexicographic over feature values and
label) before any random draw, so permuting the caller's row order changes
nothing. Per-tree seeds are spawned from the master seed, which keeps the
result independent of any training schedule.
"""

from __future__ import annotations

import math

import numpy as np

from .base import TrainedModel
from .config import ForestConfig
from .tree import ClassificationTree, Node, tree_apply_class


class ForestImpl:
    def __init__(self, trees: list[Node], n_classes: int):
        self.trees = trees
        self.n_classes = n_classes

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        acc = np.zeros((len(X), self.n_classes), dtype=np.float64)
        for root in self.trees:
            acc += tree_apply_class(root, X, self.n_classes)
        return acc / len(self.trees)

    def to_json(self) -> dict:
        return {"trees": [t.to_json() for t in self.trees], "n_classes": self.n_classes}

    @classmethod
    def from_json(cls, payload: dict) -> "ForestImpl":
        return cls([Node.from_json(t) for t in payload["trees"]], payload["n_classes"])


def canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Permutation sorting rows by (feature values, label); duplicate rows
    are interchangeable, so this is row-order independent."""
    keys = (y,) + tuple(X[:, j] for j in reversed(range(X.shape[1])))
    return np.lexsort(keys)


def _resolve_max_features(spec: str | int, d: int) -> int:
    if spec == "sqrt":
        return max(1, int(math.sqrt(d)))
    if spec == "all":
        return d
    return max(1, min(int(spec), d))


def train_random_forest(
    X: np.ndarray,
    y: list[str] | np.ndarray,
    classes: tuple[str, ...],
    config: ForestConfig = ForestConfig(),
    *,
    column_names: tuple[str, ...] | None = None,
) -> TrainedModel:
    """Fit bootstrap-aggregated Gini trees.

    Needs at least two classes present in y. The fitted model carries
    per-feature Gini importances (mean of per-tree normalized impurity
    decreases) in config["feature_importances"].
    """
    X = np.asarray(X, dtype=np.float64)
    index = {c: i for i, c in enumerate(classes)}
    y_idx = np.array([index[label] for label in y], dtype=np.int64)
    present = np.unique(y_idx)
    if len(present) < 2:
        raise ValueError(f"need at least 2 classes to train, got {len(present)}")
    if len(X) == 0:
        raise ValueError("empty training matrix")

    order = canonical_order(X, y_idx)
    Xs, ys = X[order], y_idx[order]

    n, d = X.shape
    max_features = _resolve_max_features(config.max_features, d)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_estimators)

    roots: list[Node] = []
    importance_sum = np.zeros(d, dtype=np.float64)
    importance_trees = 0
    for seq in seeds:
        rng = np.random.default_rng(seq)
        boot = rng.integers(0, n, size=n)
        tree = ClassificationTree(
            max_depth=config.max_depth,
            max_features=max_features,
            min_samples_leaf=config.min_samples_leaf,
            n_classes=len(classes),
        ).fit(Xs[boot], ys[boot], rng)
        roots.append(tree.root)
        total = tree.importance.sum()
        if total > 0:
            importance_sum += tree.importance / total
            importance_trees += 1

    importances = (
        importance_sum / importance_trees if importance_trees else importance_sum
    )

    cfg = {
        "n_estimators": config.n_estimators,
        "max_depth": config.max_depth,
        "max_features": config.max_features,
        "min_samples_leaf": config.min_samples_leaf,
        "seed": config.seed,
        "feature_importances": importances.tolist(),
    }
    return TrainedModel(
        kind="random_forest",
        classes=tuple(classes),
        config=cfg,
        loss_trace=[],
        n_features=d,
        impl=ForestImpl(roots, len(classes)),
        column_names=column_names,
    )
