"""Aggregate metric files into comparison tables and figures.

Tables go out as aligned text, CSV and JSON; confusion matrices and
per-class quality render as PNG figures next to the delimited output.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

METRIC_COLUMNS = ("accuracy", "f1", "precision", "recall")


def collect_metric_files(run_dir: str | Path) -> list[Path]:
    return sorted(Path(run_dir).glob("metrics_*.json"))


def _weighted_row(payload: dict) -> dict | None:
    report = payload.get("report")
    if not report:
        return None
    return {
        "run": payload.get("run", {}).get("name", "unnamed"),
        "accuracy": report["accuracy"],
        "f1": report["weighted"]["f1"],
        "precision": report["weighted"]["precision"],
        "recall": report["weighted"]["recall"],
    }


def render_comparison_text(rows: list[dict]) -> str:
    header = ["Run", "Accuracy", "F1 Score", "Precision", "Recall"]
    table = [header]
    for row in rows:
        table.append(
            [row["run"]] + [f"{row[c]:.4f}" for c in METRIC_COLUMNS]
        )
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_comparison_csv(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run", *METRIC_COLUMNS])
        for row in rows:
            writer.writerow([row["run"]] + [repr(row[c]) for c in METRIC_COLUMNS])


def plot_confusion(payload: dict, path: Path) -> None:
    classes = payload["confusion"]["classes"]
    matrix = np.asarray(payload["confusion"]["matrix"], dtype=np.int64)
    labels = [*classes, "Unknown"]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(labels)), max(3.5, 0.45 * len(classes))))
    im = ax.imshow(matrix, cmap="Blues")
    ax.set_xticks(range(len(labels)), labels, rotation=60, ha="right", fontsize=7)
    ax.set_yticks(range(len(classes)), classes, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(payload.get("run", {}).get("name", ""), fontsize=9)
    threshold = matrix.max() / 2 if matrix.size else 0
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            if matrix[i, j]:
                ax.text(
                    j,
                    i,
                    str(matrix[i, j]),
                    ha="center",
                    va="center",
                    fontsize=6,
                    color="white" if matrix[i, j] > threshold else "black",
                )
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_comparison(rows: list[dict], path: Path) -> None:
    names = [row["run"] for row in rows]
    x = np.arange(len(names))
    width = 0.2
    fig, ax = plt.subplots(figsize=(max(5.0, 1.3 * len(names)), 4.0))
    for i, column in enumerate(METRIC_COLUMNS):
        ax.bar(x + (i - 1.5) * width, [row[column] for row in rows], width, label=column)
    ax.set_xticks(x, names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize=8)
    ax.set_title("weighted classification metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_mitigation_quality(payload: dict, path: Path) -> None:
    per_class = payload["similarity"]["per_class"]
    names = [c["class"] for c in per_class]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6.0, 0.55 * len(names)), 4.0))
    ax.bar(x - 0.2, [c["rouge_l"] for c in per_class], 0.4, label="ROUGE-L")
    ax.bar(x + 0.2, [c["cosine"] for c in per_class], 0.4, label="cosine")
    ax.set_xticks(x, names, rotation=60, ha="right", fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title("mitigation quality per attack class")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def build_report(run_dir: str | Path) -> tuple[list[Path], int]:
    """Render every comparison artifact; returns (paths, metric-file count)."""
    run_dir = Path(run_dir)
    metric_files = collect_metric_files(run_dir)
    if not metric_files:
        return [], 0

    report_dir = run_dir / "report"
    figures_dir = report_dir / "figures"
    figures_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    payloads = [json.loads(p.read_text(encoding="utf-8")) for p in metric_files]
    rows = [row for row in (_weighted_row(p) for p in payloads) if row]

    if rows:
        text_path = report_dir / "comparison.txt"
        text_path.write_text(render_comparison_text(rows), encoding="utf-8")
        written.append(text_path)
        csv_path = report_dir / "comparison.csv"
        write_comparison_csv(rows, csv_path)
        written.append(csv_path)
        fig_path = figures_dir / "comparison.png"
        plot_comparison(rows, fig_path)
        written.append(fig_path)

    aggregate = {"runs": []}
    for path, payload in zip(metric_files, payloads):
        aggregate["runs"].append(payload)
        name = payload.get("run", {}).get("name", path.stem)
        safe = name.replace("/", "_").replace(" ", "_")
        if "confusion" in payload:
            fig_path = figures_dir / f"confusion_{safe}.png"
            plot_confusion(payload, fig_path)
            written.append(fig_path)
        if "similarity" in payload:
            fig_path = figures_dir / f"mitigation_{safe}.png"
            plot_mitigation_quality(payload, fig_path)
            written.append(fig_path)

    json_path = report_dir / "report.json"
    json_path.write_text(
        json.dumps(aggregate, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append(json_path)
    return written, len(metric_files)
