"""Attack-to-CAPEC knowledge base, mitigation prompts and corpus assembly.

The knowledge base is a bundled, editable JSON file validated at load: all
14 attack classes map onto 14 distinct CAPEC ids. It is read-only after
load and thread-safe.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from .gateway import InferenceResult
from .ingest import LogRecord
from .prompts import InstructSample, PromptTemplate, build_instruct_dataset
from .vocab import ATTACK_CLASSES, NORMAL, UnknownClassError

_ASSET_DIR = Path(__file__).resolve().parent / "assets"
DEFAULT_KB_PATH = _ASSET_DIR / "capec_kb.json"
DEFAULT_REFERENCES_PATH = _ASSET_DIR / "reference_mitigations.json"

_CAPEC_ID_RE = re.compile(r"^CAPEC-\d+$")


class MitigationRejected(ValueError):
    """Generated text was empty after cleaning."""


@dataclass(frozen=True)
class CapecEntry:
    label: str
    capec_id: str
    name: str
    description: str
    mitigations: tuple[str, ...]


@dataclass(frozen=True)
class MitigationSample:
    label: str
    text: str
    provenance: str
    cleaned: bool = True


def load_knowledge_base(path: str | Path | None = None) -> dict[str, CapecEntry]:
    """Load and validate the attack -> CAPEC table."""
    path = Path(path) if path else DEFAULT_KB_PATH
    payload = json.loads(path.read_text(encoding="utf-8"))
    entries: dict[str, CapecEntry] = {}
    for raw in payload["entries"]:
        entry = CapecEntry(
            label=raw["label"],
            capec_id=raw["capec_id"],
            name=raw["name"],
            description=raw["description"],
            mitigations=tuple(raw["mitigations"]),
        )
        if entry.label in entries:
            raise ValueError(f"duplicate knowledge-base entry for {entry.label!r}")
        if not _CAPEC_ID_RE.match(entry.capec_id):
            raise ValueError(f"malformed CAPEC id {entry.capec_id!r} for {entry.label!r}")
        entries[entry.label] = entry

    expected = set(ATTACK_CLASSES)
    if set(entries) != expected:
        missing = sorted(expected - set(entries))
        extra = sorted(set(entries) - expected)
        raise ValueError(f"knowledge base must cover all attacks; missing={missing} extra={extra}")
    ids = [e.capec_id for e in entries.values()]
    if len(set(ids)) != len(ids):
        raise ValueError("CAPEC ids must be distinct per attack class")
    return entries


def kb_checksum(path: str | Path | None = None) -> str:
    path = Path(path) if path else DEFAULT_KB_PATH
    return hashlib.sha256(path.read_bytes()).hexdigest()


def map_attack_to_capec(
    label: str, kb: Mapping[str, CapecEntry] | None = None
) -> CapecEntry:
    if kb is None:
        kb = load_knowledge_base()
    if label == NORMAL:
        raise UnknownClassError("Normal traffic has no CAPEC mapping")
    entry = kb.get(label)
    if entry is None:
        raise UnknownClassError(f"no CAPEC mapping for label {label!r}")
    return entry


def build_mitigation_prompt(entry: CapecEntry) -> str:
    """Deterministic generation prompt with the four mandated sections:
    attack type, definition, general CAPEC mitigations, IoT execution
    context."""
    if not entry.description:
        raise ValueError(f"entry {entry.label!r} has no description")
    if not entry.mitigations:
        raise ValueError(f"entry {entry.label!r} has no general mitigations")
    mitigation_block = "\n".join(f"- {m}" for m in entry.mitigations)
    return (
        f"Attack type: {entry.label} ({entry.capec_id}, {entry.name})\n"
        "\n"
        f"Definition: {entry.description}\n"
        "\n"
        "General mitigations from the CAPEC catalog:\n"
        f"{mitigation_block}\n"
        "\n"
        "Execution context: the attack targets an IoT deployment of "
        "resource-constrained devices (sensors, actuators, gateways) with "
        "limited CPU, memory and power, intermittent connectivity, and "
        "constrained update channels.\n"
        "\n"
        "Rewrite the general mitigations as a concise set of specific, "
        "actionable recommendations adapted to this IoT environment. "
        "Answer with one mitigation per line, each starting with \"- \"."
    )


_THINK_RE = re.compile(r"<think>.*?</think>", re.DOTALL | re.IGNORECASE)
_FENCE_RE = re.compile(r"^```[a-zA-Z0-9]*\s*$")
_BULLET_RE = re.compile(r"^\s*(?:[-*•·–—]+|\d+[.)])\s+")
_HEADING_RE = re.compile(r"^\s*#+\s*")
_SPACE_RE = re.compile(r"[ \t]{2,}")


def clean_generated_text(raw: str) -> str:
    """Strip markup artifacts, normalize bullets to "- ", collapse repeated
    whitespace/blank lines and drop the trailing fragment after the last
    terminal punctuation. Idempotent; raises MitigationRejected when
    nothing is left."""
    text = _THINK_RE.sub("", raw)

    lines: list[str] = []
    for line in text.splitlines():
        if _FENCE_RE.match(line):
            continue
        bullet = bool(_BULLET_RE.match(line))
        line = _BULLET_RE.sub("", line)
        line = _HEADING_RE.sub("", line)
        line = line.replace("`", "").replace("**", "").replace("*", "")
        line = _SPACE_RE.sub(" ", line).strip()
        if not line:
            continue
        lines.append(("- " + line) if bullet else line)

    text = "\n".join(lines)
    last = max(text.rfind("."), text.rfind("!"), text.rfind("?"))
    text = text[: last + 1] if last >= 0 else ""
    # truncation may leave emptied trailing lines behind
    text = "\n".join(ln for ln in (l.rstrip() for l in text.splitlines()) if ln).strip()
    if not text:
        raise MitigationRejected("text is empty after cleaning")
    return text


def build_mitigation_corpus(
    labels: Sequence[str],
    results: Sequence[InferenceResult],
    provenance: str,
) -> list[MitigationSample]:
    """Pair attack labels with generated texts and clean each one.

    Raises on failed generations, Normal labels, or texts that clean down
    to nothing, naming the offending label.
    """
    if len(labels) != len(results):
        raise ValueError("labels must align with results")
    corpus: list[MitigationSample] = []
    for label, result in zip(labels, results):
        if label == NORMAL:
            raise ValueError("Normal has no mitigation by design")
        if label not in ATTACK_CLASSES:
            raise UnknownClassError(f"unknown attack label {label!r}")
        if not result.ok:
            raise ValueError(f"generation for {label!r} failed: {result.error}")
        try:
            text = clean_generated_text(result.raw)
        except MitigationRejected:
            raise MitigationRejected(f"generated mitigation for {label!r} cleaned to empty") from None
        corpus.append(MitigationSample(label, text, provenance))
    return corpus


def corpus_by_label(corpus: Sequence[MitigationSample]) -> dict[str, str]:
    """Canonical mitigation text per class: first cleaned sample wins."""
    out: dict[str, str] = {}
    for sample in corpus:
        out.setdefault(sample.label, sample.text)
    return out


def build_combined_dataset(
    records: Sequence[LogRecord],
    labels: Sequence[str],
    corpus: Sequence[MitigationSample],
    template: PromptTemplate | None = None,
) -> list[InstructSample]:
    """Detection+mitigation instruct samples: output is the label line
    followed by that label's corpus mitigation lines; Normal records get
    the label only. Every attack label present in the records must be
    covered by the corpus."""
    texts = corpus_by_label(corpus)
    needed = {lb for lb in labels if lb != NORMAL}
    missing = sorted(needed - set(texts))
    if missing:
        raise ValueError(f"corpus is missing mitigation(s) for: {', '.join(missing)}")
    return build_instruct_dataset(records, labels, "mitigation", template, mitigations=texts)


def load_reference_mitigations(path: str | Path | None = None) -> dict[str, str]:
    """Curated per-class reference texts used to score generated
    mitigations."""
    path = Path(path) if path else DEFAULT_REFERENCES_PATH
    payload = json.loads(path.read_text(encoding="utf-8"))
    references = dict(payload["references"])
    missing = sorted(set(ATTACK_CLASSES) - set(references))
    if missing:
        raise ValueError(f"reference file missing class(es): {', '.join(missing)}")
    return references


def write_corpus_jsonl(corpus: Sequence[MitigationSample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sample in corpus:
            fh.write(
                json.dumps(
                    {
                        "label": sample.label,
                        "text": sample.text,
                        "provenance": sample.provenance,
                        "cleaned": sample.cleaned,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_corpus_jsonl(path: str | Path) -> list[MitigationSample]:
    corpus = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        corpus.append(
            MitigationSample(obj["label"], obj["text"], obj["provenance"], obj["cleaned"])
        )
    return corpus
