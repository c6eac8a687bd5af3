"""Feature ranking, selection and encoding.

Importance is the mean decrease in Gini impurity across a seeded random
forest, normalized to unit sum. Encoding is one-hot for categoricals and
population z-score for numerics, fitted exclusively on the training
partition; transform never refits.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import LogRecord
from .models.config import ForestConfig
from .models.forest import train_random_forest

#: The seven features this pipeline selects by default, by decreasing
#: forest importance on the full dataset.
DEFAULT_SELECTED_FEATURES: tuple[str, ...] = (
    "dns.qry.name.len",
    "mqtt.protoname",
    "mqtt.msg",
    "mqtt.topic",
    "mqtt.conack.flags",
    "tcp.options",
    "tcp.dstport",
)

DEFAULT_NUMERIC_FEATURES: tuple[str, ...] = ("dns.qry.name.len", "tcp.dstport")

ENCODER_FORMAT_VERSION = 1


class TypingError(ValueError):
    """A feature typed numeric does not parse as numeric for most rows."""


class MissingFeatureError(KeyError):
    """A record lacks a selected feature."""


@dataclass(frozen=True)
class FeatureImportanceReport:
    """Importances sorted descending, ties broken by feature name.

    A full fit_importance report sums to 1; a truncated view (for example
    the top entries of a wider ranking) sums to less.
    """

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        total = sum(v for _, v in self.entries)
        if any(v < 0 for _, v in self.entries):
            raise ValueError("importances must be non-negative")
        if self.entries and total > 1.0 + 1e-9:
            raise ValueError(f"importances sum to {total!r} > 1")

    @classmethod
    def from_values(cls, names: Sequence[str], values: Sequence[float]) -> "FeatureImportanceReport":
        pairs = sorted(zip(names, values), key=lambda p: (-p[1], p[0]))
        return cls(tuple((n, float(v)) for n, v in pairs))

    def to_text(self) -> str:
        width = max((len(n) for n, _ in self.entries), default=0)
        lines = [f"{n.ljust(width)}  {v:.6f}" for n, v in self.entries]
        return "\n".join(lines) + "\n"


def fit_importance(
    X: np.ndarray,
    feature_names: Sequence[str],
    labels: Sequence[str],
    config: ForestConfig = ForestConfig(n_estimators=100),
) -> FeatureImportanceReport:
    """Rank matrix-ready features by forest Gini importance.

    Deterministic under config.seed and invariant to training-row order.
    Requires at least two distinct labels.
    """
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ValueError("feature importance needs at least 2 classes")
    model = train_random_forest(X, labels, classes, config)
    values = model.config["feature_importances"]
    return FeatureImportanceReport.from_values(list(feature_names), values)


def select_top_k(report: FeatureImportanceReport, k: int = 7) -> list[str]:
    if k > len(report.entries):
        raise ValueError(f"k={k} exceeds {len(report.entries)} ranked features")
    return [name for name, _ in report.entries[:k]]


def ordinal_matrix(
    records: Sequence[LogRecord],
    features: Sequence[str],
    numeric_features: Sequence[str],
) -> np.ndarray:
    """One numeric column per raw feature for importance fitting:
    numerics parsed as float, categoricals coded in sorted-category order
    (sorted so the coding is independent of row order)."""
    numeric = set(numeric_features)
    X = np.zeros((len(records), len(features)), dtype=np.float64)
    for j, name in enumerate(features):
        if name in numeric:
            X[:, j] = [_parse_float(r, name, j_record=i) for i, r in enumerate(records)]
        else:
            values = [_get_feature(r, name, i) for i, r in enumerate(records)]
            codes = {v: k for k, v in enumerate(sorted(set(values)))}
            X[:, j] = [codes[v] for v in values]
    return X


def _get_feature(record: LogRecord, name: str, index: int) -> str:
    value = record.features.get(name)
    if value is None:
        raise MissingFeatureError(f"record {index} is missing feature {name!r}")
    return value


def _parse_float(record: LogRecord, name: str, j_record: int) -> float:
    value = _get_feature(record, name, j_record)
    try:
        return float(value)
    except ValueError:
        raise TypingError(
            f"record {j_record}: feature {name!r} value {value!r} is not numeric"
        ) from None


@dataclass(frozen=True)
class NumericEncoding:
    mean: float
    std: float  # population std; 0 marks a constant column

    @property
    def constant(self) -> bool:
        return self.std == 0.0


@dataclass(frozen=True)
class CategoricalEncoding:
    categories: tuple[str, ...]  # first-occurrence order from the fit data


@dataclass(frozen=True)
class EncoderSpec:
    """Fitted one-hot/z-score parameters; order of `features` fixes the
    encoded column layout."""

    features: tuple[str, ...]
    numeric: dict[str, NumericEncoding]
    categorical: dict[str, CategoricalEncoding]

    def column_names(self) -> list[str]:
        names: list[str] = []
        for f in self.features:
            if f in self.numeric:
                names.append(f)
            else:
                names.extend(f"{f}={c}" for c in self.categorical[f].categories)
        return names

    def width(self) -> int:
        return len(self.column_names())

    def to_text(self) -> str:
        lines = [f"# threatlog encoder-spec v{ENCODER_FORMAT_VERSION}"]
        for f in self.features:
            if f in self.numeric:
                enc = self.numeric[f]
                lines.append(f"numeric\t{f}\tmean={enc.mean!r}\tstd={enc.std!r}")
            else:
                cats = "|".join(self.categorical[f].categories)
                lines.append(f"categorical\t{f}\tcategories={cats}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EncoderSpec":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("# threatlog encoder-spec v"):
            raise ValueError("not an encoder-spec file")
        version = int(lines[0].rsplit("v", 1)[1])
        if version != ENCODER_FORMAT_VERSION:
            raise ValueError(f"unsupported encoder-spec version {version}")
        features: list[str] = []
        numeric: dict[str, NumericEncoding] = {}
        categorical: dict[str, CategoricalEncoding] = {}
        for line in lines[1:]:
            kind, name, payload = line.split("\t", 2)
            features.append(name)
            if kind == "numeric":
                mean_s, std_s = payload.split("\t")
                numeric[name] = NumericEncoding(
                    float(mean_s.removeprefix("mean=")), float(std_s.removeprefix("std="))
                )
            elif kind == "categorical":
                cats = payload.removeprefix("categories=")
                categorical[name] = CategoricalEncoding(
                    tuple(cats.split("|")) if cats else ()
                )
            else:
                raise ValueError(f"unknown encoder entry kind {kind!r}")
        return cls(tuple(features), numeric, categorical)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EncoderSpec":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def fit_encoder(
    records: Sequence[LogRecord],
    selected: Sequence[str] = DEFAULT_SELECTED_FEATURES,
    numeric_features: Sequence[str] = DEFAULT_NUMERIC_FEATURES,
) -> EncoderSpec:
    """Fit means/stds and category lists on the training partition only.

    A numeric feature whose values mostly fail to parse raises TypingError.
    Categories are ordered by first occurrence.
    """
    if not records:
        raise ValueError("cannot fit an encoder on an empty partition")
    numeric_set = set(numeric_features)
    numeric: dict[str, NumericEncoding] = {}
    categorical: dict[str, CategoricalEncoding] = {}
    for name in selected:
        values = [_get_feature(r, name, i) for i, r in enumerate(records)]
        if name in numeric_set:
            parsed = []
            failures = 0
            for v in values:
                try:
                    parsed.append(float(v))
                except ValueError:
                    failures += 1
            if failures * 2 > len(values):
                raise TypingError(
                    f"feature {name!r} typed numeric but {failures}/{len(values)} values do not parse"
                )
            if not parsed:
                raise TypingError(f"feature {name!r} has no parsable numeric values")
            arr = np.asarray(parsed, dtype=np.float64)
            numeric[name] = NumericEncoding(float(arr.mean()), float(arr.std()))
        else:
            categories = tuple(dict.fromkeys(values))
            categorical[name] = CategoricalEncoding(categories)
    return EncoderSpec(tuple(selected), numeric, categorical)


@dataclass
class FeatureMatrix:
    """Dense encoded design matrix with aligned label vectors."""

    X: np.ndarray
    column_names: tuple[str, ...]
    label_binary: list[str]
    label_class: list[str]

    def to_csv(self, path: str | Path) -> None:
        import csv

        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([*self.column_names, "label_binary", "label_class"])
            for row, lb, lc in zip(self.X, self.label_binary, self.label_class):
                writer.writerow([repr(v) for v in row.tolist()] + [lb, lc])

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        import csv

        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            columns = tuple(header[:-2])
            X_rows, lb, lc = [], [], []
            for row in reader:
                X_rows.append([float(v) for v in row[:-2]])
                lb.append(row[-2])
                lc.append(row[-1])
        X = np.asarray(X_rows, dtype=np.float64) if X_rows else np.zeros((0, len(columns)))
        return cls(X, columns, lb, lc)

    def labels_for_task(self, task: str) -> list[str]:
        return self.label_binary if task == "binary" else self.label_class


def transform(records: Sequence[LogRecord], spec: EncoderSpec) -> FeatureMatrix:
    """Apply a fitted encoder.

    Numerics map to (x - mean) / std with constant (std = 0) columns
    emitted as zeros; categoricals one-hot with categories unseen at fit
    time encoding as an all-zeros block. Missing features raise, naming
    the record index.
    """
    columns = tuple(spec.column_names())
    X = np.zeros((len(records), len(columns)), dtype=np.float64)
    col = 0
    for name in spec.features:
        if name in spec.numeric:
            enc = spec.numeric[name]
            for i, r in enumerate(records):
                value = _parse_float(r, name, i)
                X[i, col] = 0.0 if enc.constant else (value - enc.mean) / enc.std
            col += 1
        else:
            cats = spec.categorical[name].categories
            index = {c: k for k, c in enumerate(cats)}
            for i, r in enumerate(records):
                k = index.get(_get_feature(r, name, i))
                if k is not None:
                    X[i, col + k] = 1.0
            col += len(cats)

    if not np.isfinite(X).all():
        raise ValueError("encoded matrix contains non-finite entries")
    return FeatureMatrix(
        X,
        columns,
        [r.label_binary for r in records],
        [r.label_class for r in records],
    )
