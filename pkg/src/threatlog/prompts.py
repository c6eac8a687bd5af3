"""Render log records into prompts and instruct-format datasets.

Templates are versioned text assets, not code constants; see
assets/templates/. All rendering is pure and thread-safe.
"""

from __future__ import annotations

import json
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import LogRecord
from .vocab import vocabulary_for_task

TEMPLATE_VERSION = 1
_ASSET_DIR = Path(__file__).resolve().parent / "assets" / "templates"
_SLOT_RE = re.compile(r"\{([^{}]+)\}")

#: Stand-in for tokenizer-aware truncation: prompts longer than this many
#: characters are rejected.
DEFAULT_MAX_PROMPT_CHARS = 8192


class TemplateError(ValueError):
    pass


class MissingSlotError(KeyError):
    pass


class PromptTooLongError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    task: str  # binary | multiclass | mitigation
    strategy: str  # zero_shot | few_shot | instruct
    system: str
    body: str
    answer: str

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(_SLOT_RE.findall(self.body))

    def validate(self, selected_features: Sequence[str]) -> None:
        """Every selected feature appears exactly once in the body and the
        answer directive enumerates every legal label."""
        slots = list(self.slots)
        for name in selected_features:
            if slots.count(name) != 1:
                raise TemplateError(
                    f"feature {name!r} appears {slots.count(name)} times in template body"
                )
        extra = [s for s in slots if s not in selected_features]
        if extra:
            raise TemplateError(f"template body has unknown slots: {extra}")
        for label in vocabulary_for_task(self.task):
            if label not in self.answer:
                raise TemplateError(f"answer directive does not enumerate label {label!r}")


def _parse_template(text: str, strategy: str) -> PromptTemplate:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# threatlog prompt template v"):
        raise TemplateError("not a prompt template file")
    version = int(lines[0].rsplit("v", 1)[1])
    if version != TEMPLATE_VERSION:
        raise TemplateError(f"unsupported template version {version}")
    task = ""
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in lines[1:]:
        stripped = line.strip()
        if stripped.startswith("task") and "=" in stripped and current is None:
            task = stripped.split("=", 1)[1].strip()
        elif stripped.startswith("[") and stripped.endswith("]"):
            current = sections.setdefault(stripped[1:-1], [])
        elif current is not None:
            current.append(line)
    missing = [s for s in ("system", "body", "answer") if s not in sections]
    if missing or not task:
        raise TemplateError(f"template missing sections {missing} or task line")
    return PromptTemplate(
        task=task,
        strategy=strategy,
        system="\n".join(sections["system"]).strip(),
        body="\n".join(sections["body"]).strip(),
        answer="\n".join(sections["answer"]).strip(),
    )


def load_template(task: str, strategy: str = "zero_shot", path: str | Path | None = None) -> PromptTemplate:
    """Load a bundled (or custom) template asset for the task."""
    if path is None:
        path = _ASSET_DIR / f"{task}.txt"
    template = _parse_template(Path(path).read_text(encoding="utf-8"), strategy)
    if template.task != task:
        raise TemplateError(f"template file is for task {template.task!r}, wanted {task!r}")
    return template


def render_record(record: LogRecord, template: PromptTemplate) -> str:
    """Fill body slots with raw (pre-encoding) feature values.

    Single-pass substitution: values are never re-scanned for slots.
    """

    def lookup(match: re.Match) -> str:
        name = match.group(1)
        value = record.features.get(name)
        if value is None:
            raise MissingSlotError(f"record is missing template slot {name!r}")
        return value

    return _SLOT_RE.sub(lookup, template.body)


@dataclass(frozen=True)
class FewShotConfig:
    shots: int = 1
    source_partition: str = "train"
    seed: int = 0

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")


@dataclass
class FewShotPrefix:
    text: str
    exemplar_indices: tuple[int, ...]  # indices into the source record list

    def __str__(self) -> str:
        return self.text


def build_few_shot(
    records: Sequence[LogRecord],
    labels: Sequence[str],
    cfg: FewShotConfig,
    template: PromptTemplate,
) -> FewShotPrefix:
    """Stratified seeded exemplar prefix: cfg.shots per class, grouped in
    vocabulary order, each exemplar the rendered record plus gold label.

    The records must come from the declared source partition; the returned
    indices let callers assert that no other partition leaked in.
    """
    if len(records) != len(labels):
        raise ValueError("labels must align with records")
    vocabulary = vocabulary_for_task(template.task)
    by_class: dict[str, list[int]] = {name: [] for name in vocabulary}
    for i, label in enumerate(labels):
        if label in by_class:
            by_class[label].append(i)

    rng = np.random.default_rng(cfg.seed)
    chosen: list[int] = []
    parts: list[str] = []
    for name in vocabulary:
        pool = by_class[name]
        if len(pool) < cfg.shots:
            raise ValueError(
                f"class {name!r} has {len(pool)} example(s) in partition "
                f"{cfg.source_partition!r}; need {cfg.shots}"
            )
        picks = sorted(rng.choice(len(pool), size=cfg.shots, replace=False).tolist())
        for p in picks:
            idx = pool[p]
            chosen.append(idx)
            parts.append(render_record(records[idx], template) + f"\nLabel: {labels[idx]}")
    return FewShotPrefix("\n\n".join(parts), tuple(chosen))


@dataclass(frozen=True)
class Prompt:
    prompt_id: int
    system: str
    user: str
    truth: str | None = None


def build_prompt(
    record: LogRecord,
    template: PromptTemplate,
    *,
    prompt_id: int = 0,
    truth: str | None = None,
    few_shot_prefix: FewShotPrefix | None = None,
    max_chars: int = DEFAULT_MAX_PROMPT_CHARS,
) -> Prompt:
    body = render_record(record, template)
    if few_shot_prefix is not None:
        user = f"{few_shot_prefix.text}\n\n{body}\n\n{template.answer}"
    else:
        user = f"{body}\n\n{template.answer}"
    if len(user) + len(template.system) > max_chars:
        raise PromptTooLongError(
            f"prompt {prompt_id} is {len(user) + len(template.system)} chars (limit {max_chars})"
        )
    return Prompt(prompt_id, template.system, user, truth)


@dataclass(frozen=True)
class InstructSample:
    instruction: str
    input: str
    output: str


def build_instruct_dataset(
    records: Sequence[LogRecord],
    labels: Sequence[str],
    task: str,
    template: PromptTemplate | None = None,
    mitigations: dict[str, str] | None = None,
) -> list[InstructSample]:
    """One instruct sample per record; the output's first line is always a
    verbatim vocabulary label. The mitigation task appends the attack's
    mitigation lines after the label (attack records only)."""
    if len(records) != len(labels):
        raise ValueError("labels must align with records")
    if template is None:
        template = load_template(task, "instruct")
    vocabulary = vocabulary_for_task(task)
    if task == "mitigation" and mitigations is None:
        raise ValueError("mitigation task requires a mitigation source")

    instruction = f"{template.system}\n{template.answer}"
    samples: list[InstructSample] = []
    for record, label in zip(records, labels):
        if label not in vocabulary:
            raise ValueError(f"label {label!r} not in task vocabulary")
        output = label
        if task == "mitigation" and label != "Normal":
            lines = mitigations.get(label)
            if lines is None:
                raise ValueError(f"no mitigation text for attack class {label!r}")
            output = f"{label}\n{lines}"
        samples.append(InstructSample(instruction, render_record(record, template), output))
    return samples


def serialize_jsonl(samples: Sequence[InstructSample], path: str | Path) -> None:
    """One JSON object per line, keys instruction/input/output, UTF-8."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {"instruction": s.instruction, "input": s.input, "output": s.output},
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_jsonl(path: str | Path) -> list[InstructSample]:
    samples = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        samples.append(InstructSample(obj["instruction"], obj["input"], obj["output"]))
    return samples


def write_prompts_jsonl(prompts: Sequence[Prompt], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in prompts:
            fh.write(
                json.dumps(
                    {"id": p.prompt_id, "system": p.system, "user": p.user, "truth": p.truth},
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_prompts_jsonl(path: str | Path) -> list[Prompt]:
    prompts = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        prompts.append(Prompt(obj["id"], obj["system"], obj["user"], obj.get("truth")))
    return prompts
