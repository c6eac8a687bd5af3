"""CART-style trees: Gini classification for the forest, Newton regression
for the boosting stages. Split search is exact greedy over sorted unique
values; all tie-breaks are deterministic (lowest feature index, then lowest
threshold)."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np


@dataclass
class Node:
    feature: int = -1  # -1 marks a leaf
    threshold: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None
    value: np.ndarray | float | None = None  # class counts or leaf weight
    n: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def to_json(self) -> dict:
        if self.is_leaf:
            value = self.value.tolist() if isinstance(self.value, np.ndarray) else float(self.value)
            return {"leaf": value, "n": self.n}
        return {
            "f": self.feature,
            "t": float(self.threshold),
            "n": self.n,
            "l": self.left.to_json(),
            "r": self.right.to_json(),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Node":
        if "leaf" in payload:
            value = payload["leaf"]
            if isinstance(value, list):
                value = np.asarray(value, dtype=np.float64)
            return cls(value=value, n=payload["n"])
        return cls(
            feature=payload["f"],
            threshold=payload["t"],
            n=payload["n"],
            left=cls.from_json(payload["l"]),
            right=cls.from_json(payload["r"]),
        )


def _descend(node: Node, x: np.ndarray) -> Node:
    while not node.is_leaf:
        node = node.left if x[node.feature] < node.threshold else node.right
    return node


def tree_apply_class(node: Node, X: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-row class probability vectors from leaf count distributions."""
    out = np.empty((len(X), n_classes), dtype=np.float64)
    for i, x in enumerate(X):
        counts = _descend(node, x).value
        out[i] = counts / counts.sum()
    return out


def tree_apply_value(node: Node, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X), dtype=np.float64)
    for i, x in enumerate(X):
        out[i] = _descend(node, x).value
    return out


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.dot(p, p))


class ClassificationTree:
    """Depth-first grown Gini tree with per-split feature subsampling.

    Accumulates weighted impurity decrease per feature so the forest can
    report Gini importances.
    """

    def __init__(
        self,
        max_depth: int | None,
        max_features: int,
        min_samples_leaf: int,
        n_classes: int,
    ):
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.n_classes = n_classes
        self.root: Node | None = None
        self.importance: np.ndarray | None = None

    def fit(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> "ClassificationTree":
        self._n_total = len(y)
        self.importance = np.zeros(X.shape[1], dtype=np.float64)
        self.root = self._grow(X, y, rng, depth=0)
        return self

    def _grow(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator, depth: int) -> Node:
        counts = np.bincount(y, minlength=self.n_classes).astype(np.float64)
        node = Node(value=counts, n=len(y))
        impurity = _gini(counts)
        if (
            impurity == 0.0
            or len(y) < 2 * self.min_samples_leaf
            or (self.max_depth is not None and depth >= self.max_depth)
        ):
            return node

        d = X.shape[1]
        k = min(self.max_features, d)
        chosen = np.sort(rng.choice(d, size=k, replace=False))
        best = None  # (weighted_child_impurity, feature, threshold, mask)
        for f in chosen:
            split = self._best_split_on_feature(X[:, f], y, counts)
            if split is None:
                continue
            weighted, threshold = split
            if best is None or weighted < best[0] - 1e-15:
                best = (weighted, int(f), threshold)

        if best is None:
            return node

        weighted, feature, threshold = best
        gain = impurity - weighted
        mask = X[:, feature] < threshold
        self.importance[feature] += (len(y) / self._n_total) * gain
        node.feature = feature
        node.threshold = threshold
        node.left = self._grow(X[mask], y[mask], rng, depth + 1)
        node.right = self._grow(X[~mask], y[~mask], rng, depth + 1)
        return node

    def _best_split_on_feature(
        self, v: np.ndarray, y: np.ndarray, total_counts: np.ndarray
    ) -> tuple[float, float] | None:
        order = np.argsort(v, kind="stable")
        vs = v[order]
        boundaries = np.nonzero(vs[:-1] < vs[1:])[0]
        if len(boundaries) == 0:
            return None
        n = len(y)
        onehot = np.zeros((n, self.n_classes), dtype=np.float64)
        onehot[np.arange(n), y[order]] = 1.0
        prefix = np.cumsum(onehot, axis=0)

        nl = boundaries + 1
        nr = n - nl
        ok = (nl >= self.min_samples_leaf) & (nr >= self.min_samples_leaf)
        if not ok.any():
            return None
        nl, nr, boundaries = nl[ok], nr[ok], boundaries[ok]
        left = prefix[boundaries]
        right = total_counts - left
        gini_l = 1.0 - ((left / nl[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((right / nr[:, None]) ** 2).sum(axis=1)
        weighted = (nl * gini_l + nr * gini_r) / n
        b = int(np.argmin(weighted))
        threshold = float((vs[boundaries[b]] + vs[boundaries[b] + 1]) / 2.0)
        return float(weighted[b]), threshold


class RegressionTree:
    """Second-order (gradient/hessian) regression tree grown best-first.

    Best-first expansion with an unlimited leaf budget picks exactly the
    same splits as depth-first growth, so one engine serves both the
    depth-limited and the leaf-limited presets.
    """

    def __init__(
        self,
        max_depth: int | None,
        max_leaves: int | None,
        min_data_in_leaf: int,
        min_child_weight: float,
        reg_lambda: float,
    ):
        self.max_depth = max_depth
        self.max_leaves = max_leaves
        self.min_data_in_leaf = min_data_in_leaf
        self.min_child_weight = min_child_weight
        self.reg_lambda = reg_lambda
        self.root: Node | None = None

    def fit(
        self,
        X: np.ndarray,
        grad: np.ndarray,
        hess: np.ndarray,
        features: np.ndarray,
    ) -> "RegressionTree":
        lam = self.reg_lambda

        def leaf_weight(g_sum: float, h_sum: float) -> float:
            return -g_sum / (h_sum + lam)

        def score(g_sum: float, h_sum: float) -> float:
            return g_sum * g_sum / (h_sum + lam)

        def make_node(idx: np.ndarray) -> Node:
            g_sum = float(grad[idx].sum())
            h_sum = float(hess[idx].sum())
            return Node(value=leaf_weight(g_sum, h_sum), n=len(idx))

        def best_split(idx: np.ndarray):
            g_sum = float(grad[idx].sum())
            h_sum = float(hess[idx].sum())
            parent = score(g_sum, h_sum)
            best = None  # (gain, feature, threshold, mask)
            for f in features:
                v = X[idx, f]
                order = np.argsort(v, kind="stable")
                vs = v[order]
                boundaries = np.nonzero(vs[:-1] < vs[1:])[0]
                if len(boundaries) == 0:
                    continue
                gp = np.cumsum(grad[idx][order])
                hp = np.cumsum(hess[idx][order])
                nl = boundaries + 1
                nr = len(idx) - nl
                gl = gp[boundaries]
                hl = hp[boundaries]
                gr = g_sum - gl
                hr = h_sum - hl
                ok = (
                    (nl >= self.min_data_in_leaf)
                    & (nr >= self.min_data_in_leaf)
                    & (hl >= self.min_child_weight)
                    & (hr >= self.min_child_weight)
                )
                if not ok.any():
                    continue
                gains = np.where(
                    ok,
                    0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent),
                    -np.inf,
                )
                b = int(np.argmax(gains))
                if gains[b] <= 0.0:
                    continue
                if best is None or gains[b] > best[0] + 1e-15:
                    threshold = float((vs[boundaries[b]] + vs[boundaries[b] + 1]) / 2.0)
                    best = (float(gains[b]), int(f), threshold)
            return best

        all_idx = np.arange(len(grad))
        self.root = make_node(all_idx)
        counter = 0
        heap: list[tuple[float, int, Node, np.ndarray, int]] = []

        def consider(node: Node, idx: np.ndarray, depth: int):
            nonlocal counter
            if self.max_depth is not None and depth >= self.max_depth:
                return
            if len(idx) < 2 * self.min_data_in_leaf:
                return
            found = best_split(idx)
            if found is None:
                return
            gain, feature, threshold = found
            heapq.heappush(heap, (-gain, counter, node, idx, depth, feature, threshold))
            counter += 1

        consider(self.root, all_idx, 0)
        n_leaves = 1
        max_leaves = self.max_leaves if self.max_leaves is not None else math.inf
        while heap and n_leaves < max_leaves:
            _, _, node, idx, depth, feature, threshold = heapq.heappop(heap)
            mask = X[idx, feature] < threshold
            left_idx = idx[mask]
            right_idx = idx[~mask]
            node.feature = feature
            node.threshold = threshold
            node.left = make_node(left_idx)
            node.right = make_node(right_idx)
            n_leaves += 1
            consider(node.left, left_idx, depth + 1)
            consider(node.right, right_idx, depth + 1)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return tree_apply_value(self.root, X)
