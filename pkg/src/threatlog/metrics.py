"""Classification and text-quality metrics.

Pure computations, safe for parallel map. Cosine similarity runs over a
deterministic tf-idf space by default so evaluation needs no external
embedding service; an endpoint-backed space implements the same contract.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .vocab import UNKNOWN_LABEL

_TOKEN_RE = re.compile(r"[^\W_]+")  # unicode alphanumeric runs
# ASCII fast path: map every non-alphanumeric byte to space, then split.
_BYTE_TBL = bytes(
    b if chr(b).isascii() and chr(b).isalnum() else 0x20 for b in range(256)
)


@lru_cache(maxsize=4096)
def _tokenize(text: str) -> tuple[bytes, ...]:
    t = text.lower()
    if t.isascii():
        return tuple(t.encode("ascii").translate(_BYTE_TBL).split())
    return tuple(w.encode("utf-8") for w in _TOKEN_RE.findall(t))


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs."""
    return [t.decode("utf-8") for t in _tokenize(text)]


# --- confusion matrix and classification report ----------------------------


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes; the final extra
    column tallies Unknown predictions."""

    classes: tuple[str, ...]
    matrix: np.ndarray  # shape (K, K + 1), int64

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def accuracy(self) -> float:
        k = len(self.classes)
        return float(np.trace(self.matrix[:, :k])) / self.total

    def to_text(self) -> str:
        headers = ["true\\pred", *self.classes, UNKNOWN_LABEL]
        rows = [headers]
        for i, name in enumerate(self.classes):
            rows.append([name] + [str(int(v)) for v in self.matrix[i]])
        widths = [max(len(r[c]) for r in rows) for c in range(len(headers))]
        return "\n".join(
            "  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows
        ) + "\n"

    def to_json(self) -> dict:
        return {"classes": list(self.classes), "matrix": self.matrix.tolist()}

    @classmethod
    def from_json(cls, payload: Mapping) -> "ConfusionMatrix":
        return cls(tuple(payload["classes"]), np.asarray(payload["matrix"], dtype=np.int64))


def confusion_matrix(
    truth: Sequence[str],
    predicted: Sequence[str],
    vocabulary: Sequence[str],
) -> ConfusionMatrix:
    if len(truth) != len(predicted):
        raise ValueError(f"length mismatch: {len(truth)} truths vs {len(predicted)} predictions")
    classes = tuple(vocabulary)
    index = {name: i for i, name in enumerate(classes)}
    k = len(classes)
    matrix = np.zeros((k, k + 1), dtype=np.int64)
    for t, p in zip(truth, predicted):
        ti = index.get(t)
        if ti is None:
            raise ValueError(f"truth label {t!r} not in vocabulary")
        if p == UNKNOWN_LABEL:
            matrix[ti, k] += 1
            continue
        pi = index.get(p)
        if pi is None:
            raise ValueError(f"predicted label {p!r} not in vocabulary or Unknown")
        matrix[ti, pi] += 1
    return ConfusionMatrix(classes, matrix)


@dataclass
class ClassLine:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    accuracy: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list[ClassLine]
    total: int

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "per_class": [
                {
                    "class": line.name,
                    "precision": line.precision,
                    "recall": line.recall,
                    "f1": line.f1,
                    "support": line.support,
                }
                for line in self.per_class
            ],
            "total": self.total,
        }

    def to_text(self) -> str:
        rows = [["class", "precision", "recall", "f1", "support"]]
        for line in self.per_class:
            rows.append(
                [
                    line.name,
                    f"{line.precision:.4f}",
                    f"{line.recall:.4f}",
                    f"{line.f1:.4f}",
                    str(line.support),
                ]
            )
        rows.append(
            [
                "weighted",
                f"{self.weighted_precision:.4f}",
                f"{self.weighted_recall:.4f}",
                f"{self.weighted_f1:.4f}",
                str(self.total),
            ]
        )
        rows.append(
            [
                "macro",
                f"{self.macro_precision:.4f}",
                f"{self.macro_recall:.4f}",
                f"{self.macro_f1:.4f}",
                str(self.total),
            ]
        )
        widths = [max(len(r[c]) for r in rows) for c in range(5)]
        table = "\n".join(
            "  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows
        )
        footer = (
            f"accuracy={self.accuracy:.4f}\n"
            "conventions: precision/recall are 0 when their denominator is 0; "
            "weighted averages use class supports as weights\n"
        )
        return table + "\n" + footer


def classification_report(cm: ConfusionMatrix) -> ClassificationReport:
    """Per-class precision/recall/F1 plus support-weighted and macro means.

    Weighted recall is computed as total true positives over total samples,
    which is exactly the support-weighted mean of per-class recalls and
    therefore always equals accuracy.
    """
    if cm.total <= 0:
        raise ValueError("empty confusion matrix")
    k = len(cm.classes)
    m = cm.matrix
    supports = m.sum(axis=1)
    predicted = m[:, :k].sum(axis=0)
    tp = np.diag(m[:, :k])

    per_class: list[ClassLine] = []
    for i, name in enumerate(cm.classes):
        p = float(tp[i] / predicted[i]) if predicted[i] > 0 else 0.0
        r = float(tp[i] / supports[i]) if supports[i] > 0 else 0.0
        f = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
        per_class.append(ClassLine(name, p, r, f, int(supports[i])))

    total = cm.total
    accuracy = float(tp.sum()) / total
    weighted_precision = (
        sum(line.precision * line.support for line in per_class) / total
    )
    weighted_f1 = sum(line.f1 * line.support for line in per_class) / total
    weighted_recall = float(tp.sum()) / total

    macro_precision = sum(line.precision for line in per_class) / k
    macro_recall = sum(line.recall for line in per_class) / k
    macro_f1 = sum(line.f1 for line in per_class) / k

    return ClassificationReport(
        accuracy=accuracy,
        weighted_precision=weighted_precision,
        weighted_recall=weighted_recall,
        weighted_f1=weighted_f1,
        macro_precision=macro_precision,
        macro_recall=macro_recall,
        macro_f1=macro_f1,
        per_class=per_class,
        total=total,
    )


# --- ROUGE-L ---------------------------------------------------------------


@lru_cache(maxsize=4096)
def _position_masks(tokens: tuple[bytes, ...]) -> dict[bytes, int]:
    masks: dict[bytes, int] = {}
    for j, y in enumerate(tokens):
        masks[y] = masks.get(y, 0) | (1 << j)
    return masks


def _lcs_len(a: tuple[bytes, ...], b: tuple[bytes, ...]) -> int:
    # Allison-Dix bit-parallel LCS length; zeros left in v mark LCS cells.
    n = len(b)
    if n == 0 or len(a) == 0:
        return 0
    get = _position_masks(b).get
    full = (1 << n) - 1
    v = full
    for x in a:
        u = v & get(x, 0)
        v = ((v + u) | (v - u)) & full
    return n - v.bit_count()


def rouge_l(candidate: str, reference: str) -> float:
    """LCS-based F-measure (beta=1) over lowercased alphanumeric tokens.

    Both empty scores 1.0, one side empty scores 0.0. The harmonic mean of
    precision l/|candidate| and recall l/|reference| reduces to
    2*l / (|candidate| + |reference|).
    """
    ct = _tokenize(candidate)
    rt = _tokenize(reference)
    if ct == rt:
        return 1.0
    if not ct or not rt:
        return 0.0
    l = _lcs_len(ct, rt)
    if l == 0:
        return 0.0
    return 2.0 * l / (len(ct) + len(rt))


# --- tf-idf cosine similarity ----------------------------------------------


@dataclass
class TfidfSpace:
    """Deterministic tf-idf vector space with smoothed idf and L2 norm.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1, fitted jointly over the corpus
    (references and candidates together).
    """

    vocabulary: dict[str, int]
    idf: np.ndarray
    corpus_size: int

    @classmethod
    def fit(cls, corpus: Sequence[str]) -> "TfidfSpace":
        df: Counter[str] = Counter()
        for doc in corpus:
            df.update({t.decode("utf-8") for t in _tokenize(doc)})
        vocabulary = {t: i for i, t in enumerate(sorted(df))}
        n = len(corpus)
        idf = np.array(
            [math.log((1 + n) / (1 + df[t])) + 1.0 for t in sorted(df)], dtype=np.float64
        )
        return cls(vocabulary, idf, n)

    def _counts(self, text: str) -> Counter[str]:
        return Counter(t.decode("utf-8") for t in _tokenize(text))

    def vector(self, text: str) -> np.ndarray:
        """L2-normalized tf-idf vector; all-zero when nothing is in-vocabulary."""
        v = np.zeros(len(self.vocabulary), dtype=np.float64)
        for token, count in self._counts(text).items():
            i = self.vocabulary.get(token)
            if i is not None:
                v[i] = count * self.idf[i]
        norm = float(np.linalg.norm(v))
        return v / norm if norm > 0 else v

    def similarity(self, candidate: str, reference: str) -> float:
        # identical token counts mean identical vectors: exactly 1.0
        a = self._counts(candidate)
        b = self._counts(reference)
        if a == b:
            return 1.0 if a else 0.0
        va = self.vector(candidate)
        vb = self.vector(reference)
        if not va.any() or not vb.any():
            return 0.0
        return float(np.clip(np.dot(va, vb), -1.0, 1.0))


class ExternalEmbeddingSpace:
    """Same similarity contract as TfidfSpace, backed by an embeddings
    endpoint (POST {base}/v1/embeddings, OpenAI wire format)."""

    def __init__(self, base_url: str, model: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        import requests

        resp = requests.post(
            f"{self.base_url}/v1/embeddings",
            json={"model": self.model, "input": [text]},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        v = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        norm = float(np.linalg.norm(v))
        v = v / norm if norm > 0 else v
        self._cache[text] = v
        return v

    def similarity(self, candidate: str, reference: str) -> float:
        va = self.vector(candidate)
        vb = self.vector(reference)
        if not va.any() or not vb.any():
            return 0.0
        return float(np.clip(np.dot(va, vb), -1.0, 1.0))


def cosine_similarity(candidate: str, reference: str, space) -> float:
    """Cosine of the two texts' vectors in the given space; 0.0 when either
    side vectorizes to zero."""
    return space.similarity(candidate, reference)


# --- mitigation quality ----------------------------------------------------


@dataclass
class ClassSimilarity:
    name: str
    rouge_l: float
    cosine: float
    support: int


@dataclass
class TextSimilarityReport:
    per_class: list[ClassSimilarity]
    weighted_rouge_l: float
    weighted_cosine: float
    total: int
    space: str = "tfidf"

    def to_json(self) -> dict:
        return {
            "space": self.space,
            "per_class": [
                {
                    "class": c.name,
                    "rouge_l": c.rouge_l,
                    "cosine": c.cosine,
                    "support": c.support,
                }
                for c in self.per_class
            ],
            "weighted": {"rouge_l": self.weighted_rouge_l, "cosine": self.weighted_cosine},
            "total": self.total,
        }

    def to_text(self) -> str:
        rows = [["class", "rouge_l", "cosine", "support"]]
        for c in self.per_class:
            rows.append([c.name, f"{c.rouge_l:.4f}", f"{c.cosine:.4f}", str(c.support)])
        rows.append(
            [
                "weighted",
                f"{self.weighted_rouge_l:.4f}",
                f"{self.weighted_cosine:.4f}",
                str(self.total),
            ]
        )
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        table = "\n".join(
            "  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows
        )
        return table + f"\nsimilarity space: {self.space}\n"


def mitigation_quality_report(
    candidates: Mapping[str, Sequence[str] | str],
    references: Mapping[str, str],
    *,
    space: TfidfSpace | ExternalEmbeddingSpace | None = None,
) -> TextSimilarityReport:
    """Per-class and support-weighted ROUGE-L / cosine of candidates against
    the per-class reference. Every class must appear on both sides."""
    missing = sorted(set(references) - set(candidates))
    if missing:
        raise ValueError(f"missing candidate(s) for class(es): {', '.join(missing)}")
    missing = sorted(set(candidates) - set(references))
    if missing:
        raise ValueError(f"missing reference(s) for class(es): {', '.join(missing)}")

    normalized: dict[str, list[str]] = {}
    for name, texts in candidates.items():
        normalized[name] = [texts] if isinstance(texts, str) else list(texts)

    if space is None:
        corpus = list(references.values())
        for texts in normalized.values():
            corpus.extend(texts)
        space = TfidfSpace.fit(corpus)
    space_name = "tfidf" if isinstance(space, TfidfSpace) else "external-embedding"

    per_class: list[ClassSimilarity] = []
    for name in references:
        ref = references[name]
        texts = normalized[name]
        r = sum(rouge_l(t, ref) for t in texts) / len(texts)
        c = sum(cosine_similarity(t, ref, space) for t in texts) / len(texts)
        per_class.append(ClassSimilarity(name, r, c, len(texts)))

    total = sum(c.support for c in per_class)
    weighted_r = sum(c.rouge_l * c.support for c in per_class) / total
    weighted_c = sum(c.cosine * c.support for c in per_class) / total
    return TextSimilarityReport(per_class, weighted_r, weighted_c, total, space_name)


def write_json(payload: dict, path) -> None:
    from pathlib import Path

    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
