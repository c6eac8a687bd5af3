"""threatlog command-line pipeline.

Subcommands mirror the experiment flow: preprocess -> features ->
{baseline | prompts -> infer -> eval} -> mitigate -> report. Every command
validates its upstream artifacts, writes its outputs plus a manifest into
the run directory, and treats existing primary outputs as immutable unless
--force is given.

Exit codes: 0 success, 1 usage/config error, 2 upstream artifact missing,
3 endpoint failure threshold exceeded.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import capec as capec_mod
from . import gateway as gw
from . import prompts as prompts_mod
from .config import ConfigError, RunConfig, RunManifest, load_config
from .features import (
    FeatureMatrix,
    fit_encoder,
    fit_importance,
    ordinal_matrix,
    select_top_k,
    transform,
)
from .ingest import (
    SamplingSpec,
    clean,
    load_csv,
    read_split_manifests,
    sample_subset,
    split_stratified,
    write_cleaned_csv,
    write_cleaning_report,
    write_rejects,
    write_split_manifests,
)
from .metrics import (
    classification_report,
    confusion_matrix,
    mitigation_quality_report,
    write_json,
)
from .models import (
    ForestConfig,
    GBM_PRESETS,
    MLPConfig,
    save_model,
    train_gbm,
    train_mlp,
    train_random_forest,
)
from .report import build_report
from .vocab import ATTACK_CLASSES, vocabulary_for_task

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UPSTREAM = 2
EXIT_ENDPOINT = 3


class UpstreamMissing(Exception):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing artifact {path}; run `threatlog {producer}` first")


class EndpointFailure(Exception):
    pass


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise UpstreamMissing(path, producer)
    return path


def _guard_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(
            f"{path} already exists; use --force or a fresh run directory"
        )


def _load_dataset(out: Path, cfg: RunConfig):
    csv_path = _require(out / "cleaned.csv", "preprocess")
    _require(out / "splits" / "train.idx", "preprocess")
    result = load_csv(
        csv_path,
        label_binary_column=cfg.label_binary_column,
        label_class_column=cfg.label_class_column,
    )
    split = read_split_manifests(out / "splits", cfg.seed)
    return result.records, split


def _task_labels(records, task: str) -> list[str]:
    if task == "binary":
        return [r.label_binary for r in records]
    return [r.label_class for r in records]


# --- commands ---------------------------------------------------------------


def cmd_preprocess(cfg: RunConfig, force: bool) -> int:
    if not cfg.csv:
        raise ConfigError("no input CSV configured (data.csv or --csv)")
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    _guard_overwrite(out / "cleaned.csv", force)

    manifest = RunManifest.start("preprocess", cfg)
    manifest.add_input(cfg.csv)

    result = load_csv(
        cfg.csv,
        schema=cfg.selected,
        label_binary_column=cfg.label_binary_column,
        label_class_column=cfg.label_class_column,
    )
    cleaned, report = clean(
        result.records,
        cfg.selected,
        drop_columns=cfg.drop_columns,
        markers=cfg.nan_markers,
    )

    total = cfg.resolved_sample_total()
    if total is not None:
        spec = SamplingSpec(mode=cfg.sample_mode, total=total, seed=cfg.seed)
        cleaned = sample_subset(cleaned, spec)

    labels = _task_labels(cleaned, cfg.task if cfg.task == "binary" else "multiclass")
    split = split_stratified(cleaned, cfg.ratios, cfg.seed, labels=labels)

    write_cleaned_csv(
        cleaned,
        out / "cleaned.csv",
        label_binary_column=cfg.label_binary_column,
        label_class_column=cfg.label_class_column,
    )
    write_cleaning_report(report, out / "cleaning_report.txt")
    write_rejects(result.rejects, out / "rejects.tsv")
    write_split_manifests(split, out / "splits")

    for name in ("cleaned.csv", "cleaning_report.txt", "rejects.tsv"):
        manifest.add_artifact(out / name, out)
    for name in ("train.idx", "validation.idx", "test.idx"):
        manifest.add_artifact(out / "splits" / name, out)
    manifest.write(out)

    sizes = {k: len(v) for k, v in split.partitions().items()}
    print(
        f"preprocess: {report.input_rows} rows in, {report.output_rows} clean, "
        f"{len(cleaned)} sampled, split {sizes['train']}/{sizes['validation']}/{sizes['test']}, "
        f"{len(result.rejects)} rejects"
    )
    return EXIT_OK


def cmd_features(cfg: RunConfig, force: bool) -> int:
    out = cfg.out_dir()
    records, split = _load_dataset(out, cfg)
    _guard_overwrite(out / "encoder.spec", force)

    manifest = RunManifest.start("features", cfg)
    manifest.add_input(out / "cleaned.csv", out)

    train_records = [records[i] for i in split.train]
    universe = list(records[0].features.keys()) if records else []
    numeric = tuple(f for f in cfg.numeric if f in universe)

    if cfg.rank_features:
        X = ordinal_matrix(train_records, universe, numeric)
        labels = _task_labels(train_records, cfg.importance_labels)
        report = fit_importance(
            X, universe, labels, ForestConfig(n_estimators=cfg.importance_trees, seed=cfg.seed)
        )
        selected = select_top_k(report, min(cfg.top_k, len(universe)))
        (out / "importance.txt").write_text(report.to_text(), encoding="utf-8")
        manifest.add_artifact(out / "importance.txt", out)
    else:
        missing = [f for f in cfg.selected if f not in universe]
        if missing:
            raise ConfigError(f"selected features not in dataset: {missing}")
        selected = list(cfg.selected)

    (out / "selected.txt").write_text("".join(f"{f}\n" for f in selected), encoding="utf-8")

    spec = fit_encoder(train_records, selected, numeric)
    spec.save(out / "encoder.spec")

    for name, indices in split.partitions().items():
        matrix = transform([records[i] for i in indices], spec)
        matrix.to_csv(out / f"matrix_{name}.csv")
        manifest.add_artifact(out / f"matrix_{name}.csv", out)

    manifest.add_artifact(out / "selected.txt", out)
    manifest.add_artifact(out / "encoder.spec", out)
    manifest.write(out)
    print(
        f"features: selected {len(selected)} features, encoded width {spec.width()}, "
        f"matrices for {len(split.train)}/{len(split.validation)}/{len(split.test)} rows"
    )
    return EXIT_OK


def _build_model_config(cfg: RunConfig):
    if cfg.model_kind == "random_forest":
        return ForestConfig(
            n_estimators=cfg.n_estimators, max_depth=cfg.max_depth, seed=cfg.seed
        )
    if cfg.model_kind == "gbm":
        preset = GBM_PRESETS[cfg.gbm_preset]
        overrides = {}
        if cfg.rounds is not None:
            overrides["rounds"] = cfg.rounds
        if cfg.max_depth is not None:
            overrides["max_depth"] = cfg.max_depth
        if overrides:
            from dataclasses import replace

            preset = replace(preset, **overrides)
        return preset
    if cfg.model_kind == "mlp":
        return MLPConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, seed=cfg.seed)
    raise ConfigError(f"unknown model kind {cfg.model_kind!r}")


def cmd_baseline(cfg: RunConfig, force: bool) -> int:
    out = cfg.out_dir()
    _require(out / "matrix_train.csv", "features")
    _require(out / "matrix_test.csv", "features")
    run_name = (
        f"{cfg.model_kind}:{cfg.gbm_preset}" if cfg.model_kind == "gbm" else cfg.model_kind
    )
    safe = run_name.replace(":", "_")
    model_path = out / f"baseline_{safe}.json"
    _guard_overwrite(model_path, force)

    manifest = RunManifest.start("baseline", cfg)
    manifest.add_input(out / "matrix_train.csv", out)
    manifest.add_input(out / "matrix_test.csv", out)

    train = FeatureMatrix.from_csv(out / "matrix_train.csv")
    test = FeatureMatrix.from_csv(out / "matrix_test.csv")
    classes = vocabulary_for_task("binary" if cfg.task == "binary" else "multiclass")
    y_train = train.labels_for_task(cfg.task)
    y_test = test.labels_for_task(cfg.task)
    present = tuple(c for c in classes if c in set(y_train) | set(y_test))

    model_config = _build_model_config(cfg)
    if cfg.model_kind == "random_forest":
        model = train_random_forest(
            train.X, y_train, present, model_config, column_names=train.column_names
        )
    elif cfg.model_kind == "gbm":
        model = train_gbm(
            train.X, y_train, present, model_config, column_names=train.column_names
        )
    else:
        model = train_mlp(
            train.X, y_train, present, model_config, column_names=train.column_names
        )

    save_model(model, model_path)
    predictions = model.predict(test.X)
    cm = confusion_matrix(y_test, predictions, present)
    report = classification_report(cm)

    payload = {
        "run": {"name": run_name, "kind": "baseline", "task": cfg.task, "seed": cfg.seed},
        "report": report.to_json(),
        "confusion": cm.to_json(),
    }
    metrics_path = out / f"metrics_baseline_{safe}.json"
    write_json(payload, metrics_path)
    (out / f"confusion_baseline_{safe}.txt").write_text(
        cm.to_text() + "\n" + report.to_text(), encoding="utf-8"
    )

    manifest.add_artifact(model_path, out)
    manifest.add_artifact(metrics_path, out)
    manifest.write(out)
    print(
        f"baseline {run_name}: accuracy {report.accuracy:.4f}, weighted F1 {report.weighted_f1:.4f} "
        f"on {cm.total} test rows"
    )
    return EXIT_OK


def cmd_prompts(cfg: RunConfig, force: bool) -> int:
    out = cfg.out_dir()
    records, split = _load_dataset(out, cfg)
    _guard_overwrite(out / "prompts.jsonl", force)

    manifest = RunManifest.start("prompts", cfg)
    manifest.add_input(out / "cleaned.csv", out)

    template = prompts_mod.load_template(cfg.task, cfg.strategy)
    template.validate(cfg.selected)

    labels = _task_labels(records, cfg.task)
    prefix = None
    if cfg.strategy == "few_shot":
        train_records = [records[i] for i in split.train]
        train_labels = [labels[i] for i in split.train]
        fs_cfg = prompts_mod.FewShotConfig(shots=cfg.shots, source_partition="train", seed=cfg.seed)
        prefix = prompts_mod.build_few_shot(train_records, train_labels, fs_cfg, template)

    prompt_list = [
        prompts_mod.build_prompt(
            records[i],
            template,
            prompt_id=i,
            truth=labels[i],
            few_shot_prefix=prefix,
            max_chars=cfg.max_prompt_chars,
        )
        for i in split.test
    ]
    prompts_mod.write_prompts_jsonl(prompt_list, out / "prompts.jsonl")
    manifest.add_artifact(out / "prompts.jsonl", out)

    if cfg.strategy == "instruct" and cfg.task != "mitigation":
        for name, indices in (("train", split.train), ("validation", split.validation)):
            samples = prompts_mod.build_instruct_dataset(
                [records[i] for i in indices],
                [labels[i] for i in indices],
                cfg.task,
                template,
            )
            path = out / f"instruct_{name}.jsonl"
            prompts_mod.serialize_jsonl(samples, path)
            manifest.add_artifact(path, out)
    elif cfg.strategy == "instruct" and cfg.task == "mitigation":
        print("prompts: detection+mitigation instruct data is written by `threatlog mitigate`")

    manifest.write(out)
    print(f"prompts: {len(prompt_list)} {cfg.strategy} prompts for task {cfg.task}")
    return EXIT_OK


def _generation_params(cfg: RunConfig) -> gw.GenerationParams:
    defaults = {
        "binary": gw.BINARY_CLASSIFY_PARAMS,
        "multiclass": gw.MULTICLASS_CLASSIFY_PARAMS,
        "mitigation": gw.MITIGATION_PARAMS,
    }[cfg.task]
    from dataclasses import replace

    overrides = {}
    if cfg.temperature is not None:
        overrides["temperature"] = cfg.temperature
    if cfg.top_p is not None:
        overrides["top_p"] = cfg.top_p
    if cfg.max_new_tokens is not None:
        overrides["max_new_tokens"] = cfg.max_new_tokens
    if cfg.repetition_penalty is not None:
        overrides["repetition_penalty"] = cfg.repetition_penalty
    if cfg.do_sample is not None:
        overrides["do_sample"] = cfg.do_sample
    return replace(defaults, **overrides) if overrides else defaults


def _endpoint(cfg: RunConfig) -> gw.EndpointConfig:
    return gw.EndpointConfig(
        base_url=cfg.base_url,
        model=cfg.endpoint_model,
        auth_env=cfg.auth_env,
        timeout_s=cfg.timeout_s,
        max_in_flight=cfg.max_in_flight,
        retries=cfg.retries,
        backoff_ms=cfg.backoff_ms,
    )


def cmd_infer(cfg: RunConfig, force: bool) -> int:
    out = cfg.out_dir()
    prompts_path = _require(out / "prompts.jsonl", "prompts")
    results_path = out / "results.jsonl"
    _guard_overwrite(results_path, force)

    manifest = RunManifest.start("infer", cfg)
    manifest.add_input(prompts_path, out)

    prompt_list = prompts_mod.read_prompts_jsonl(prompts_path)
    vocabulary = vocabulary_for_task(cfg.task)
    results = gw.complete_batch(
        prompt_list,
        _endpoint(cfg),
        _generation_params(cfg),
        vocabulary,
        with_mitigation=cfg.task == "mitigation",
    )

    import json as _json

    with results_path.open("w", encoding="utf-8") as fh:
        for result in results:
            fh.write(_json.dumps(result.to_json(), ensure_ascii=False) + "\n")
    manifest.add_artifact(results_path, out)
    manifest.write(out)

    failures = sum(1 for r in results if not r.ok)
    print(f"infer: {len(results)} completions, {failures} failed")
    if results and failures / len(results) > cfg.failure_limit:
        print(
            f"endpoint failure rate {failures}/{len(results)} exceeds limit {cfg.failure_limit}",
            file=sys.stderr,
        )
        return EXIT_ENDPOINT
    return EXIT_OK


def cmd_eval(cfg: RunConfig, force: bool) -> int:
    out = cfg.out_dir()
    prompts_path = _require(out / "prompts.jsonl", "prompts")
    results_path = _require(out / "results.jsonl", "infer")
    run_name = f"{cfg.endpoint_model}:{cfg.strategy}"
    safe = run_name.replace(":", "_").replace("/", "_")
    metrics_path = out / f"metrics_llm_{safe}.json"
    _guard_overwrite(metrics_path, force)

    manifest = RunManifest.start("eval", cfg)
    manifest.add_input(prompts_path, out)
    manifest.add_input(results_path, out)

    import json as _json

    prompt_list = prompts_mod.read_prompts_jsonl(prompts_path)
    by_id = {}
    for line in results_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = _json.loads(line)
            by_id[obj["id"]] = obj

    truth, predicted = [], []
    for prompt in prompt_list:
        truth.append(prompt.truth)
        result = by_id.get(prompt.prompt_id)
        predicted.append(result["label"] if result else "Unknown")

    vocabulary = vocabulary_for_task("binary" if cfg.task == "binary" else "multiclass")
    cm = confusion_matrix(truth, predicted, vocabulary)
    report = classification_report(cm)

    payload = {
        "run": {
            "name": run_name,
            "kind": "llm",
            "task": cfg.task,
            "strategy": cfg.strategy,
            "seed": cfg.seed,
        },
        "report": report.to_json(),
        "confusion": cm.to_json(),
    }
    write_json(payload, metrics_path)
    (out / f"confusion_llm_{safe}.txt").write_text(
        cm.to_text() + "\n" + report.to_text(), encoding="utf-8"
    )
    manifest.add_artifact(metrics_path, out)
    manifest.write(out)
    print(
        f"eval {run_name}: accuracy {report.accuracy:.4f}, weighted F1 {report.weighted_f1:.4f} "
        f"({cm.total} samples)"
    )
    return EXIT_OK


def cmd_mitigate(cfg: RunConfig, force: bool) -> int:
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    corpus_path = out / "mitigation_corpus.jsonl"
    _guard_overwrite(corpus_path, force)

    manifest = RunManifest.start("mitigate", cfg)
    kb_path = Path(cfg.kb_path) if cfg.kb_path else capec_mod.DEFAULT_KB_PATH
    refs_path = (
        Path(cfg.references_path) if cfg.references_path else capec_mod.DEFAULT_REFERENCES_PATH
    )
    manifest.add_input(kb_path)
    manifest.add_input(refs_path)

    kb = capec_mod.load_knowledge_base(kb_path)
    references = capec_mod.load_reference_mitigations(refs_path)

    system = (
        "You adapt general security mitigations to practical recommendations "
        "for resource-constrained IoT deployments."
    )
    labels = [c for c in ATTACK_CLASSES]
    prompt_list = [
        prompts_mod.Prompt(i, system, capec_mod.build_mitigation_prompt(kb[label]), label)
        for i, label in enumerate(labels)
    ]
    results = gw.complete_batch(
        prompt_list, _endpoint(cfg), _generation_params(cfg), vocabulary_for_task("multiclass")
    )
    failed = [labels[i] for i, r in enumerate(results) if not r.ok]
    if failed:
        print(f"mitigation generation failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ENDPOINT

    provenance = f"{cfg.endpoint_model}@{cfg.base_url} temp={_generation_params(cfg).temperature}"
    corpus = capec_mod.build_mitigation_corpus(labels, results, provenance)
    capec_mod.write_corpus_jsonl(corpus, corpus_path)
    manifest.add_artifact(corpus_path, out)

    candidates = {sample.label: sample.text for sample in corpus}
    quality = mitigation_quality_report(candidates, references)
    payload = {
        "run": {
            "name": f"{cfg.endpoint_model}:mitigation",
            "kind": "mitigation",
            "task": "mitigation",
            "seed": cfg.seed,
            "kb_sha256": capec_mod.kb_checksum(kb_path),
            "reference_source": "curated bundled references",
        },
        "similarity": quality.to_json(),
    }
    metrics_path = out / "metrics_mitigation.json"
    write_json(payload, metrics_path)
    (out / "mitigation_quality.txt").write_text(quality.to_text(), encoding="utf-8")
    manifest.add_artifact(metrics_path, out)

    # combined detection+mitigation instruct data when a dataset is present
    if (out / "cleaned.csv").exists() and (out / "splits" / "train.idx").exists():
        records, split = _load_dataset(out, cfg)
        labels_all = [r.label_class for r in records]
        template = prompts_mod.load_template("mitigation", "instruct")
        for name, indices in (("train", split.train), ("validation", split.validation)):
            samples = capec_mod.build_combined_dataset(
                [records[i] for i in indices],
                [labels_all[i] for i in indices],
                corpus,
                template,
            )
            path = out / f"combined_{name}.jsonl"
            prompts_mod.serialize_jsonl(samples, path)
            manifest.add_artifact(path, out)

    manifest.write(out)
    print(
        f"mitigate: corpus of {len(corpus)} classes, weighted ROUGE-L "
        f"{quality.weighted_rouge_l:.4f}, cosine {quality.weighted_cosine:.4f}"
    )
    return EXIT_OK


def cmd_report(cfg: RunConfig, force: bool) -> int:
    out = cfg.out_dir()
    manifest = RunManifest.start("report", cfg)
    written, count = build_report(out)
    if count == 0:
        print("report: no metric files found in run directory; nothing to aggregate")
        return EXIT_OK
    for path in written:
        manifest.add_artifact(path, out)
    manifest.write(out)
    print(f"report: aggregated {count} metric file(s) into {out / 'report'}")
    return EXIT_OK


# --- argument parsing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "features": cmd_features,
    "baseline": cmd_baseline,
    "prompts": cmd_prompts,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "mitigate": cmd_mitigate,
    "report": cmd_report,
}

_FLAG_TO_KEY = {
    "task": "task",
    "variant": "variant",
    "csv": "csv",
    "seed": "seed",
    "out": "out",
    "sample_mode": "sample_mode",
    "sample_total": "sample_total",
    "top_k": "top_k",
    "model": "model_kind",
    "preset": "gbm_preset",
    "n_estimators": "n_estimators",
    "epochs": "epochs",
    "rounds": "rounds",
    "strategy": "strategy",
    "shots": "shots",
    "endpoint_url": "base_url",
    "endpoint_model": "endpoint_model",
    "retries": "retries",
    "max_in_flight": "max_in_flight",
    "kb": "kb_path",
    "references": "references_path",
}


def build_parser() -> _Parser:
    parser = _Parser(prog="threatlog", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", help="run directory (all artifact paths are relative to it)")
        p.add_argument("--seed", type=int)
        p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
        p.add_argument("--task", choices=["binary", "multiclass", "mitigation"])
        p.add_argument("--variant", choices=["full", "reduced"])
        if name == "preprocess":
            p.add_argument("--csv", help="input dataset CSV")
            p.add_argument("--sample-mode", choices=["imbalanced_random", "balanced", "none"])
            p.add_argument("--sample-total", type=int)
        if name == "features":
            p.add_argument("--top-k", type=int)
        if name == "baseline":
            p.add_argument("--model", choices=["random_forest", "gbm", "mlp"])
            p.add_argument("--preset", choices=sorted(GBM_PRESETS))
            p.add_argument("--n-estimators", type=int)
            p.add_argument("--epochs", type=int)
            p.add_argument("--rounds", type=int)
        if name in ("prompts", "eval"):
            p.add_argument("--strategy", choices=["zero_shot", "few_shot", "instruct"])
            p.add_argument("--shots", type=int)
        if name in ("infer", "mitigate", "eval"):
            p.add_argument("--endpoint-url")
            p.add_argument("--endpoint-model")
            p.add_argument("--retries", type=int)
            p.add_argument("--max-in-flight", type=int)
        if name == "mitigate":
            p.add_argument("--kb", help="knowledge-base JSON path")
            p.add_argument("--references", help="reference mitigations JSON path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    for flag, key in _FLAG_TO_KEY.items():
        if hasattr(args, flag) and getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    try:
        cfg = load_config(args.config, overrides)
        return _COMMANDS[args.command](cfg, args.force)
    except UpstreamMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
