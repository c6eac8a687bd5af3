"""Synthetic demo data and mock-endpoint fixtures.

Generates a small Edge-IIoT-shaped CSV (same seven feature columns and
label columns) plus fixture tables for the bundled mock endpoint, so the
whole pipeline runs offline:

    python -m threatlog.demo dataset demo.csv --rows-per-class 120
    python -m threatlog.demo fixture --prompts run/prompts.jsonl --out fixture.json
    python -m threatlog.demo mitigation-fixture --out mfixture.json
"""

from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from .capec import load_knowledge_base, load_reference_mitigations
from .mock_server import Fixture
from .prompts import read_prompts_jsonl
from .vocab import ATTACK_CLASSES, CLASS_VOCABULARY, NORMAL

FEATURES = (
    "dns.qry.name.len",
    "mqtt.protoname",
    "mqtt.msg",
    "mqtt.topic",
    "mqtt.conack.flags",
    "tcp.options",
    "tcp.dstport",
)

_PROTONAMES = ("MQTT", "0")
_FLAGS = ("0x00000000", "0x00000001", "0")


def generate_records(rows_per_class: int, seed: int = 7) -> list[dict[str, str]]:
    """Class-separable synthetic rows over the seven selected features.

    Per class, (dns length, port) enumerate a distinct pair per row, so the
    rows survive duplicate removal; disjoint per-class port ranges carry
    the class signal.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for ci, name in enumerate(CLASS_VOCABULARY):
        for i in range(rows_per_class):
            length = 3 * ci + i // 3
            port = 1000 + 97 * ci + i % 3
            row = {
                "dns.qry.name.len": str(length),
                "mqtt.protoname": _PROTONAMES[ci % 2],
                "mqtt.msg": f"m{ci % 5}.{int(rng.integers(0, 2))}",
                "mqtt.topic": f"site/dev{ci % 4}",
                "mqtt.conack.flags": _FLAGS[ci % 3],
                "tcp.options": f"opt{ci % 6}",
                "tcp.dstport": str(port),
                "Attack_label": "0" if name == NORMAL else "1",
                "Attack_type": name,
            }
            rows.append(row)
    order = rng.permutation(len(rows))
    return [rows[i] for i in order]


def write_dataset(
    path: str | Path,
    rows_per_class: int = 120,
    seed: int = 7,
    *,
    dirty: bool = False,
) -> int:
    """Write the demo CSV; with dirty=True adds duplicates, marker values
    and an inconsistent-label row to exercise cleaning and rejects."""
    rows = generate_records(rows_per_class, seed)
    if dirty and rows:
        rows.append(dict(rows[0]))  # exact duplicate
        broken = dict(rows[1])
        broken["dns.qry.name.len"] = ""
        rows.append(broken)
        inconsistent = dict(rows[2])
        inconsistent["Attack_label"] = "0"
        inconsistent["Attack_type"] = "DDoS_UDP"
        rows.append(inconsistent)
    header = [*FEATURES, "Attack_label", "Attack_type"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return len(rows)


def classification_fixture(
    prompts_path: str | Path,
    *,
    correct_period: int = 10,
    correct_per_period: int = 8,
    unknown_slot: int = 9,
) -> tuple[Fixture, dict[int, str]]:
    """Fixture with a known accuracy pattern over the prompt file.

    Position i in the prompt order is answered correctly when
    i % correct_period < correct_per_period, with an unparseable
    completion at the unknown_slot position, and the next class in
    vocabulary order otherwise. Returns the fixture and the expected
    label per prompt id (Unknown for unparseable), fixed by construction.
    """
    prompts = read_prompts_jsonl(prompts_path)
    responses: dict[str, str] = {}
    expected: dict[int, str] = {}
    for position, prompt in enumerate(prompts):
        truth = prompt.truth
        slot = position % correct_period
        if slot < correct_per_period:
            completion, label = truth, truth
        elif slot == unknown_slot:
            completion, label = "inconclusive signal 42", "Unknown"
        else:
            vocab = ("Normal", "Attack") if truth in ("Normal", "Attack") else CLASS_VOCABULARY
            wrong = vocab[(vocab.index(truth) + 1) % len(vocab)]
            completion, label = wrong, wrong
        if responses.get(prompt.user, completion) != completion:
            raise ValueError(
                f"prompt text collision with conflicting completions (id {prompt.prompt_id})"
            )
        responses[prompt.user] = completion
        expected[prompt.prompt_id] = label
    return Fixture(responses=responses), expected


def mitigation_fixture(
    perturbed: tuple[str, ...] = ("Password", "SQL_injection"),
) -> tuple[Fixture, dict[str, str]]:
    """Fixture answering each per-class mitigation prompt with the curated
    reference text, except perturbed classes which get an extra sentence.
    Returns the fixture and the completion text per class."""
    from .capec import build_mitigation_prompt

    kb = load_knowledge_base()
    references = load_reference_mitigations()
    responses: dict[str, str] = {}
    completions: dict[str, str] = {}
    for label in ATTACK_CLASSES:
        text = references[label]
        if label in perturbed:
            text = text + "\n- Review the incident afterwards."
        responses[build_mitigation_prompt(kb[label])] = text
        completions[label] = text
    return Fixture(responses=responses), completions


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="write a synthetic demo CSV")
    p.add_argument("path")
    p.add_argument("--rows-per-class", type=int, default=120)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--dirty", action="store_true", help="add rows that exercise cleaning")

    p = sub.add_parser("fixture", help="build a mock-endpoint fixture from a prompts file")
    p.add_argument("--prompts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--expected-out", help="also write the expected label per prompt id")

    p = sub.add_parser("mitigation-fixture", help="build the mitigation-generation fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--perturb", nargs="*", default=["Password", "SQL_injection"])

    args = parser.parse_args(argv)
    if args.command == "dataset":
        n = write_dataset(args.path, args.rows_per_class, args.seed, dirty=args.dirty)
        print(f"wrote {n} rows to {args.path}")
    elif args.command == "fixture":
        fixture, expected = classification_fixture(args.prompts)
        fixture.save(args.out)
        if args.expected_out:
            Path(args.expected_out).write_text(
                json.dumps(expected, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
        print(f"fixture with {len(fixture.responses)} prompts -> {args.out}")
    else:
        fixture, _ = mitigation_fixture(tuple(args.perturb))
        fixture.save(args.out)
        print(f"mitigation fixture for {len(fixture.responses)} classes -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
