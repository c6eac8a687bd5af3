"""Self-describing JSON container for trained models.

The format_version field is mandatory; loading rejects unknown versions.
Serialization is deterministic (sorted keys, repr floats), so retraining
with the same seed round-trips to byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

from .base import TrainedModel
from .forest import ForestImpl
from .gbm import GBMImpl
from .mlp import MLPNetwork

FORMAT_VERSION = 1

_IMPLS = {
    "random_forest": ForestImpl,
    "gbm": GBMImpl,
    "mlp": MLPNetwork,
}


def model_to_json(model: TrainedModel) -> dict:
    if model.kind not in _IMPLS:
        raise ValueError(f"unknown model kind {model.kind!r}")
    return {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "classes": list(model.classes),
        "config": model.config,
        "loss_trace": model.loss_trace,
        "n_features": model.n_features,
        "column_names": list(model.column_names) if model.column_names else None,
        "params": model.impl.to_json(),
    }


def save_model(model: TrainedModel, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(model_to_json(model), sort_keys=True) + "\n", encoding="utf-8"
    )


def load_model(path: str | Path) -> TrainedModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version: {version!r}")
    kind = payload["kind"]
    impl_cls = _IMPLS.get(kind)
    if impl_cls is None:
        raise ValueError(f"unknown model kind {kind!r}")
    return TrainedModel(
        kind=kind,
        classes=tuple(payload["classes"]),
        config=payload["config"],
        loss_trace=payload["loss_trace"],
        n_features=payload["n_features"],
        impl=impl_cls.from_json(payload["params"]),
        column_names=tuple(payload["column_names"]) if payload["column_names"] else None,
    )
