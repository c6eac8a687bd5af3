"""Run configuration (INI file + CLI overrides) and run manifests.

Every command writes a manifest listing its config snapshot, input and
artifact checksums and versions; re-running with identical config and
inputs reproduces the manifest byte-identically except for the timing
block.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .features import DEFAULT_NUMERIC_FEATURES, DEFAULT_SELECTED_FEATURES
from .ingest import (
    DEFAULT_DROP_COLUMNS,
    DEFAULT_LABEL_BINARY_COLUMN,
    DEFAULT_LABEL_CLASS_COLUMN,
    DEFAULT_NAN_MARKERS,
    SPLIT_RATIOS,
)

#: Subset sizes per task configuration.
DEFAULT_SAMPLE_TOTALS = {
    ("binary", "full"): 12000,
    ("multiclass", "full"): 15000,
    ("multiclass", "reduced"): 7500,
    ("mitigation", "full"): 15000,
    ("mitigation", "reduced"): 7500,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # [run]
    seed: int = 42
    task: str = "binary"  # binary | multiclass | mitigation
    variant: str = "full"  # full | reduced
    out: str = "run"
    # [data]
    csv: str = ""
    label_binary_column: str = DEFAULT_LABEL_BINARY_COLUMN
    label_class_column: str = DEFAULT_LABEL_CLASS_COLUMN
    drop_columns: tuple[str, ...] = DEFAULT_DROP_COLUMNS
    nan_markers: tuple[str, ...] = DEFAULT_NAN_MARKERS
    sample_mode: str = "imbalanced_random"  # imbalanced_random | balanced | none
    sample_total: int | None = None
    # [split]
    ratios: tuple[float, float, float] = SPLIT_RATIOS
    # [features]
    selected: tuple[str, ...] = DEFAULT_SELECTED_FEATURES
    numeric: tuple[str, ...] = DEFAULT_NUMERIC_FEATURES
    top_k: int = 7
    rank_features: bool = True
    importance_labels: str = "multiclass"  # multiclass | binary
    importance_trees: int = 100
    # [model]
    model_kind: str = "random_forest"  # random_forest | gbm | mlp
    gbm_preset: str = "xgb_like"  # xgb_like | lgbm_like
    n_estimators: int = 200
    max_depth: int | None = None
    epochs: int = 100
    batch_size: int = 64
    rounds: int | None = None
    # [prompts]
    strategy: str = "zero_shot"  # zero_shot | few_shot | instruct
    shots: int = 1
    max_prompt_chars: int = 8192
    # [endpoint]
    base_url: str = "http://127.0.0.1:8089"
    endpoint_model: str = "mock-model"
    auth_env: str = "THREATLOG_API_TOKEN"
    timeout_s: float = 30.0
    max_in_flight: int = 4
    retries: int = 2
    backoff_ms: int = 250
    failure_limit: float = 0.5
    # [generation] (None = task default)
    temperature: float | None = None
    top_p: float | None = None
    max_new_tokens: int | None = None
    repetition_penalty: float | None = None
    do_sample: bool | None = None
    # [mitigation]
    kb_path: str = ""
    references_path: str = ""

    def __post_init__(self):
        if self.task not in ("binary", "multiclass", "mitigation"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.variant not in ("full", "reduced"):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {self.ratios}")
        if self.sample_total is not None and self.sample_total <= 0:
            raise ConfigError("sample_total must be positive")

    def resolved_sample_total(self) -> int | None:
        if self.sample_mode == "none":
            return None
        if self.sample_total is not None:
            return self.sample_total
        return DEFAULT_SAMPLE_TOTALS[(self.task, self.variant)]

    def out_dir(self) -> Path:
        return Path(self.out)

    def snapshot(self) -> dict:
        snap = asdict(self)
        for key, value in snap.items():
            if isinstance(value, tuple):
                snap[key] = list(value)
        return snap


_SECTION_KEYS = {
    "run": {"seed", "task", "variant", "out"},
    "data": {
        "csv",
        "label_binary_column",
        "label_class_column",
        "drop_columns",
        "nan_markers",
        "sample_mode",
        "sample_total",
    },
    "split": {"ratios"},
    "features": {
        "selected",
        "numeric",
        "top_k",
        "rank_features",
        "importance_labels",
        "importance_trees",
    },
    "model": {
        "model_kind",
        "gbm_preset",
        "n_estimators",
        "max_depth",
        "epochs",
        "batch_size",
        "rounds",
    },
    "prompts": {"strategy", "shots", "max_prompt_chars"},
    "endpoint": {
        "base_url",
        "endpoint_model",
        "auth_env",
        "timeout_s",
        "max_in_flight",
        "retries",
        "backoff_ms",
        "failure_limit",
    },
    "generation": {"temperature", "top_p", "max_new_tokens", "repetition_penalty", "do_sample"},
    "mitigation": {"kb_path", "references_path"},
}

_TUPLE_KEYS = {"drop_columns", "selected", "numeric"}
_BOOL_KEYS = {"rank_features", "do_sample"}


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key == "nan_markers":
        return tuple(raw.split("|"))
    if key in _TUPLE_KEYS:
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if key == "ratios":
        parts = tuple(float(s) for s in raw.split(","))
        if len(parts) != 3:
            raise ConfigError("ratios needs exactly three values")
        return parts
    if key in _BOOL_KEYS:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: cannot parse boolean from {raw!r}")
    hints = {f.name: f.type for f in fields(RunConfig)}
    hint = hints.get(key, "str")
    if raw.lower() in ("none", ""):
        if "None" in hint:
            return None
    if hint.startswith("int"):
        return int(raw)
    if hint.startswith("float"):
        return float(raw)
    if hint == "int | None":
        return int(raw)
    if hint == "float | None":
        return float(raw)
    if hint == "bool | None":
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read the key = value sections of an INI file; CLI overrides win."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        read = parser.read(Path(path), encoding="utf-8")
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section, keys in _SECTION_KEYS.items():
            if not parser.has_section(section):
                continue
            for key, raw in parser.items(section):
                if key not in keys:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[key] = _coerce(key, raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        values[key] = value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @classmethod
    def start(cls, command: str, config: RunConfig) -> "RunManifest":
        manifest = cls(command=command, config=config.snapshot())
        manifest.versions = {
            "threatlog": __version__,
            "python": platform.python_version(),
        }
        manifest.timing = {"started_unix": time.time()}
        return manifest

    def add_input(self, path: str | Path, base: Path | None = None) -> None:
        label = str(Path(path).relative_to(base)) if base else str(path)
        self.inputs[label] = sha256_file(path)

    def add_artifact(self, path: str | Path, base: Path | None = None) -> None:
        label = str(Path(path).relative_to(base)) if base else str(path)
        self.artifacts[label] = sha256_file(path)

    def write(self, out_dir: str | Path) -> Path:
        self.timing["elapsed_s"] = time.time() - self.timing.get("started_unix", time.time())
        payload = {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "versions": self.versions,
            "timing": self.timing,
        }
        path = Path(out_dir) / f"manifest_{self.command}.json"
        path.write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        return path


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
