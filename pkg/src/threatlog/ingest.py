"""CSV ingestion, cleaning, stratified splitting and subsampling of IoT logs.

Everything here is a pure function over immutable record lists; no shared
mutable state, safe to call from multiple threads.
"""

from __future__ import annotations

import csv
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .vocab import (
    ATTACK,
    BINARY_VOCABULARY,
    CLASS_VOCABULARY,
    NORMAL,
    binary_label_of,
)

DEFAULT_LABEL_BINARY_COLUMN = "Attack_label"
DEFAULT_LABEL_CLASS_COLUMN = "Attack_type"

#: Markers treated as invalid/missing values during cleaning.
DEFAULT_NAN_MARKERS: tuple[str, ...] = ("", "nan", "NaN")

#: Identifier-like columns discarded by default: timestamps and raw network
#: endpoint identifiers carry no generalizable signal and leak flow identity.
DEFAULT_DROP_COLUMNS: tuple[str, ...] = (
    "frame.time",
    "ip.src_host",
    "ip.dst_host",
    "arp.src.proto_ipv4",
    "arp.dst.proto_ipv4",
    "tcp.srcport",
    "udp.port",
)

SPLIT_RATIOS: tuple[float, float, float] = (0.70, 0.15, 0.15)


class SchemaError(ValueError):
    """The CSV header is missing required columns."""


class DegenerateClassError(ValueError):
    """A class has too few records to stratify."""


class SamplingError(ValueError):
    """A sampling request cannot be satisfied."""


@dataclass(frozen=True)
class LogRecord:
    """One cleaned log row with both label views.

    Invariant: label_class == "Normal" iff label_binary == "Normal".
    """

    features: dict[str, str]
    label_binary: str
    label_class: str


@dataclass(frozen=True)
class RejectedRow:
    row_number: int  # 1-based data-row number (header not counted)
    reason: str


@dataclass
class LoadResult:
    records: list[LogRecord]
    rejects: list[RejectedRow] = field(default_factory=list)


@dataclass
class CleaningReport:
    input_rows: int = 0
    invalid: int = 0
    duplicates: int = 0
    output_rows: int = 0
    columns_dropped: tuple[str, ...] = ()
    required_features: tuple[str, ...] = ()
    markers: tuple[str, ...] = DEFAULT_NAN_MARKERS

    def to_text(self) -> str:
        lines = [
            f"input_rows={self.input_rows}",
            f"invalid={self.invalid}",
            f"duplicates={self.duplicates}",
            f"output_rows={self.output_rows}",
            "columns_dropped=" + ",".join(self.columns_dropped),
            "required_features=" + ",".join(self.required_features),
            "markers=" + "|".join(self.markers),
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/validation/test index sets over a record list."""

    train: tuple[int, ...]
    validation: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def partitions(self) -> dict[str, tuple[int, ...]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


@dataclass(frozen=True)
class SamplingSpec:
    mode: str  # "imbalanced_random" | "balanced"
    total: int
    seed: int


def _parse_binary_label(raw: str) -> str | None:
    value = raw.strip()
    if value in ("0", "0.0"):
        return NORMAL
    if value in ("1", "1.0"):
        return ATTACK
    lowered = value.lower()
    if lowered == "normal":
        return NORMAL
    if lowered == "attack":
        return ATTACK
    return None


def load_csv(
    path: str | Path,
    schema: Sequence[str] | None = None,
    *,
    label_binary_column: str = DEFAULT_LABEL_BINARY_COLUMN,
    label_class_column: str = DEFAULT_LABEL_CLASS_COLUMN,
) -> LoadResult:
    """Parse a UTF-8 CSV with a header row into LogRecords.

    `schema` lists feature columns that must be present in the header;
    columns not in the schema are preserved in the feature map. Malformed
    or label-inconsistent rows are collected as rejects, never silently
    dropped. Row order is preserved.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header row") from None

        missing = [c for c in (label_binary_column, label_class_column) if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing label column(s): {', '.join(missing)}")
        if schema:
            absent = [c for c in schema if c not in header]
            if absent:
                raise SchemaError(f"{path}: missing schema column(s): {', '.join(absent)}")

        bin_idx = header.index(label_binary_column)
        cls_idx = header.index(label_class_column)
        feature_names = [c for i, c in enumerate(header) if i not in (bin_idx, cls_idx)]
        feature_idx = [i for i in range(len(header)) if i not in (bin_idx, cls_idx)]

        records: list[LogRecord] = []
        rejects: list[RejectedRow] = []
        for row_number, row in enumerate(reader, start=1):
            if len(row) != len(header):
                rejects.append(
                    RejectedRow(row_number, f"expected {len(header)} fields, got {len(row)}")
                )
                continue
            label_binary = _parse_binary_label(row[bin_idx])
            if label_binary is None:
                rejects.append(
                    RejectedRow(row_number, f"unparsable binary label {row[bin_idx]!r}")
                )
                continue
            label_class = row[cls_idx].strip()
            if label_class not in CLASS_VOCABULARY:
                rejects.append(
                    RejectedRow(row_number, f"unknown class label {label_class!r}")
                )
                continue
            if binary_label_of(label_class) != label_binary:
                rejects.append(
                    RejectedRow(
                        row_number,
                        f"inconsistent labels: class {label_class!r} with binary {label_binary!r}",
                    )
                )
                continue
            features = {name: row[i] for name, i in zip(feature_names, feature_idx)}
            records.append(LogRecord(features, label_binary, label_class))

    return LoadResult(records, rejects)


def clean(
    records: Sequence[LogRecord],
    required_features: Sequence[str],
    *,
    drop_columns: Sequence[str] = DEFAULT_DROP_COLUMNS,
    markers: Sequence[str] = DEFAULT_NAN_MARKERS,
) -> tuple[list[LogRecord], CleaningReport]:
    """Remove invalid rows, drop irrelevant columns and deduplicate.

    A row is invalid when any required feature is absent or carries a
    marker value. Duplicates are full-row equality over all retained
    columns plus labels; the first occurrence is kept. Idempotent.
    """
    marker_set = set(markers)
    drop_set = set(drop_columns)
    report = CleaningReport(
        input_rows=len(records),
        columns_dropped=tuple(drop_columns),
        required_features=tuple(required_features),
        markers=tuple(markers),
    )

    cleaned: list[LogRecord] = []
    seen: set[tuple] = set()
    for record in records:
        invalid = False
        for name in required_features:
            value = record.features.get(name)
            if value is None or value in marker_set:
                invalid = True
                break
        if invalid:
            report.invalid += 1
            continue
        features = {k: v for k, v in record.features.items() if k not in drop_set}
        key = (
            tuple(sorted(features.items())),
            record.label_binary,
            record.label_class,
        )
        if key in seen:
            report.duplicates += 1
            continue
        seen.add(key)
        cleaned.append(LogRecord(features, record.label_binary, record.label_class))

    report.output_rows = len(cleaned)
    return cleaned, report


def _largest_remainder(n: int, ratios: Sequence[float]) -> list[int]:
    """Apportion n into integer parts matching the ratios.

    Floors first, then hands the leftover units to the parts with the
    largest fractional remainders (earlier part wins ties).
    """
    exact = [n * r for r in ratios]
    parts = [int(x) for x in exact]
    leftover = n - sum(parts)
    remainders = sorted(
        range(len(ratios)), key=lambda i: (-(exact[i] - parts[i]), i)
    )
    for i in remainders[:leftover]:
        parts[i] += 1
    return parts


def split_stratified(
    records: Sequence[LogRecord],
    ratios: tuple[float, float, float] = SPLIT_RATIOS,
    seed: int = 0,
    *,
    labels: Sequence[str] | None = None,
) -> DatasetSplit:
    """Per-class seeded shuffle and 70/15/15 apportionment.

    Stratifies on `labels` when given, otherwise on each record's class
    label. Every class needs at least 3 records. The same seed always
    reproduces the same index sets.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if labels is None:
        labels = [r.label_class for r in records]
    if len(labels) != len(records):
        raise ValueError("labels must align with records")

    by_class: dict[str, list[int]] = {}
    for i, label in enumerate(labels):
        by_class.setdefault(label, []).append(i)

    canonical = dict.fromkeys((*CLASS_VOCABULARY, *BINARY_VOCABULARY))
    order = [c for c in canonical if c in by_class]
    order += sorted(c for c in by_class if c not in canonical)

    for name in order:
        if len(by_class[name]) < 3:
            raise DegenerateClassError(
                f"class {name!r} has {len(by_class[name])} record(s); need at least 3"
            )

    rng = np.random.default_rng(seed)
    train: list[int] = []
    validation: list[int] = []
    test: list[int] = []
    for name in order:
        idx = np.array(by_class[name], dtype=np.int64)
        idx = idx[rng.permutation(len(idx))]
        n_train, n_val, _ = _largest_remainder(len(idx), ratios)
        train.extend(idx[:n_train].tolist())
        validation.extend(idx[n_train : n_train + n_val].tolist())
        test.extend(idx[n_train + n_val :].tolist())

    return DatasetSplit(
        train=tuple(sorted(train)),
        validation=tuple(sorted(validation)),
        test=tuple(sorted(test)),
        seed=seed,
    )


def sample_subset(records: Sequence[LogRecord], spec: SamplingSpec) -> list[LogRecord]:
    """Draw a subset: uniform without replacement, or per-class balanced.

    Balanced mode takes floor(total / n_classes) records per class, capped
    at each class's availability. Deterministic under spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "imbalanced_random":
        if spec.total > len(records):
            raise SamplingError(
                f"requested {spec.total} records but only {len(records)} available"
            )
        chosen = rng.choice(len(records), size=spec.total, replace=False)
        return [records[i] for i in sorted(chosen.tolist())]

    if spec.mode == "balanced":
        by_class: dict[str, list[int]] = {}
        for i, record in enumerate(records):
            by_class.setdefault(record.label_class, []).append(i)
        if not by_class:
            raise SamplingError("balanced sampling requires at least one class")
        quota = spec.total // len(by_class)
        picked: list[int] = []
        for name in [c for c in CLASS_VOCABULARY if c in by_class] + sorted(
            c for c in by_class if c not in CLASS_VOCABULARY
        ):
            idx = by_class[name]
            take = min(quota, len(idx))
            chosen = rng.choice(len(idx), size=take, replace=False)
            picked.extend(idx[j] for j in chosen.tolist())
        return [records[i] for i in sorted(picked)]

    raise SamplingError(f"unknown sampling mode: {spec.mode!r}")


# --- file interfaces -------------------------------------------------------


def write_cleaned_csv(
    records: Sequence[LogRecord],
    path: str | Path,
    *,
    label_binary_column: str = DEFAULT_LABEL_BINARY_COLUMN,
    label_class_column: str = DEFAULT_LABEL_CLASS_COLUMN,
) -> None:
    path = Path(path)
    columns: list[str] = []
    for record in records:
        for name in record.features:
            if name not in columns:
                columns.append(name)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns + [label_binary_column, label_class_column])
        for record in records:
            row = [record.features.get(c, "") for c in columns]
            row.append("0" if record.label_binary == NORMAL else "1")
            row.append(record.label_class)
            writer.writerow(row)


def write_cleaning_report(report: CleaningReport, path: str | Path) -> None:
    Path(path).write_text(report.to_text(), encoding="utf-8")


def write_rejects(rejects: Iterable[RejectedRow], path: str | Path) -> None:
    lines = [f"{r.row_number}\t{r.reason}" for r in rejects]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_split_manifests(split: DatasetSplit, directory: str | Path) -> dict[str, Path]:
    """One index file per partition, one integer per line."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, indices in split.partitions().items():
        p = directory / f"{name}.idx"
        p.write_text("".join(f"{i}\n" for i in indices), encoding="utf-8")
        paths[name] = p
    return paths


def read_split_manifests(directory: str | Path, seed: int = 0) -> DatasetSplit:
    directory = Path(directory)
    parts = {}
    for name in ("train", "validation", "test"):
        text = (directory / f"{name}.idx").read_text(encoding="utf-8")
        parts[name] = tuple(int(line) for line in text.splitlines() if line.strip())
    return DatasetSplit(parts["train"], parts["validation"], parts["test"], seed)
