"""Fixed label spaces shared by every stage of the pipeline.

The 15-class vocabulary order is load-bearing: it defines row/column order
of confusion matrices, one-hot layouts, exemplar grouping and tie-breaking
everywhere, so it must never be reordered.
"""

from __future__ import annotations

from collections.abc import Sequence

CLASS_VOCABULARY: tuple[str, ...] = (
    "Normal",
    "Backdoor",
    "DDoS_HTTP",
    "DDoS_ICMP",
    "DDoS_TCP",
    "DDoS_UDP",
    "Fingerprinting",
    "MITM",
    "Password",
    "Port_Scanning",
    "Ransomware",
    "SQL_injection",
    "Uploading",
    "Vulnerability_scanner",
    "XSS",
)

ATTACK_CLASSES: tuple[str, ...] = CLASS_VOCABULARY[1:]

NORMAL = "Normal"
ATTACK = "Attack"
BINARY_VOCABULARY: tuple[str, ...] = (NORMAL, ATTACK)

#: Sentinel for completions from which no vocabulary label could be extracted.
UNKNOWN_LABEL = "Unknown"


class UnknownClassError(ValueError):
    """A label outside the fixed class vocabulary was encountered."""


def class_index(name: str, vocabulary: Sequence[str] = CLASS_VOCABULARY) -> int:
    try:
        return list(vocabulary).index(name)
    except ValueError:
        raise UnknownClassError(f"unknown class label: {name!r}") from None


def is_attack(name: str) -> bool:
    if name == NORMAL:
        return False
    if name in CLASS_VOCABULARY:
        return True
    raise UnknownClassError(f"unknown class label: {name!r}")


def binary_label_of(class_name: str) -> str:
    """Map a multiclass label onto the binary vocabulary."""
    return ATTACK if is_attack(class_name) else NORMAL


def vocabulary_for_task(task: str) -> tuple[str, ...]:
    if task == "binary":
        return BINARY_VOCABULARY
    if task in ("multiclass", "mitigation"):
        return CLASS_VOCABULARY
    raise ValueError(f"unknown task: {task!r}")
