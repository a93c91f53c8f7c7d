"""Pipeline orchestration: subcommands wiring ingestion through reporting.

Every stage reads prior-stage artifacts from the output directory, writes its
own files there, and records a stage manifest with content hashes of its
inputs and outputs. Rerunning a stage on unchanged inputs reproduces
byte-identical artifacts. Exit codes: 0 success, 1 computation error,
2 usage error or missing input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, evaluation, ingestion, labeling, mtlvision, nncore, splitting, textmodels
from .core import TEXT_FEATURES, validate_observation
from .labeling import LabelPolicy
from .textmodels import ModelKind, TaskKind, TaskSpec

log = logging.getLogger("lectkit")

STAGE_VERSION = 1


class CliError(Exception):
    def __init__(self, category: str, detail: str, exit_code: int = 1):
        self.category = category
        self.exit_code = exit_code
        super().__init__(detail)


def _missing(path: Path, hint: str) -> CliError:
    return CliError("MissingInput", f"{path} not found; {hint}", exit_code=2)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_stage(out: Path, stage: str, config: dict,
                 inputs: list[Path], outputs: list[Path]) -> None:
    manifest = {
        "stage": stage,
        "version": STAGE_VERSION,
        "tool_version": __version__,
        "config": config,
        "inputs": {str(p.name): _sha256(p) for p in sorted(inputs)},
        "outputs": {str(p.name): _sha256(p) for p in sorted(outputs)},
    }
    (out / f"{stage}.stage.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise _missing(path, hint)
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_fractions(text: str) -> list[float]:
    """Accept '0.1..1.0' (step 0.1) or a comma-separated list."""
    if ".." in text:
        lo, hi = (float(v) for v in text.split("..", 1))
        values = np.round(np.arange(lo, hi + 1e-9, 0.1), 10)
        return [float(v) for v in values]
    return [float(v) for v in text.split(",") if v.strip()]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = _out_dir(args)
    prevalences = {}
    for item in args.prevalence:
        code, _, value = item.partition("=")
        prevalences[code] = float(value)
    config = ingestion.SynthConfig(
        seed=args.seed, n_lectures=args.lectures, events_per_lecture=args.events,
        feature_prevalences=prevalences or {"AQ": 0.15},
        observer_teams=args.observer_teams,
        question_noise_rate=args.question_noise,
        series_size=args.series_size,
    )
    corpus = ingestion.generate_synthetic(config)

    annotations_csv = out / "annotations.csv"
    with open(annotations_csv, "w", newline="") as fh:
        ingestion.serialize_annotations(corpus.observations, fh)
    observations = out / "observations.jsonl"
    with open(observations, "w") as fh:
        ingestion.serialize_observations(corpus.observations, fh)
    transcripts = out / "transcripts.jsonl"
    with open(transcripts, "w") as fh:
        ingestion.serialize_transcript(corpus.transcripts, fh)
    truth = out / "truth.jsonl"
    with open(truth, "w") as fh:
        ingestion.serialize_truth(corpus.truth, corpus.transcripts, fh)
    manifest_path = out / "manifest.json"
    ingestion.save_manifest(
        ingestion.Manifest(corpus.metas, (annotations_csv.name,), (transcripts.name,)),
        manifest_path)

    outputs = [annotations_csv, observations, transcripts, truth, manifest_path]
    if args.frames:
        frame_cfg = mtlvision.FrameSynthConfig(seed=args.seed, n_frames=args.frames,
                                               embedding_dim=args.embedding_dim)
        records, keys = mtlvision.generate_synthetic_frames(frame_cfg)
        emb_path = out / "embeddings.lemb"
        mtlvision.write_embeddings(
            emb_path, frame_cfg.embedding_dim,
            (mtlvision.EmbeddingRecord(r.frame_id, view, vec.astype(np.float32))
             for r in records
             for view, vec in ((mtlvision.VIEW_CAMERA, r.camera),
                               (mtlvision.VIEW_SCREEN, r.screen))),
            backbone="synthetic", tap="none", meta={"seed": args.seed})
        specs_path = out / "frame_specs.jsonl"
        with open(specs_path, "w") as fh:
            labeling.serialize_frame_specs(
                (labeling.FrameSampleSpec(r.lecture_id, r.time_s,
                                          tuple(int(v) for v in r.labels))
                 for r in records), fh)
        frames_meta = out / "frames_meta.json"
        frames_meta.write_text(json.dumps(
            {r.lecture_id: k for r, k in zip(records, keys)}, indent=2, sort_keys=True) + "\n")
        outputs += [emb_path, specs_path, frames_meta]

    _write_stage(out, "synth", {
        "seed": args.seed, "lectures": args.lectures, "events": args.events,
        "prevalences": prevalences or {"AQ": 0.15}, "observer_teams": args.observer_teams,
        "question_noise": args.question_noise, "series_size": args.series_size,
        "frames": args.frames, "embedding_dim": args.embedding_dim,
    }, [], outputs)
    print(f"synthetic corpus written to {out}")
    return 0


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    manifest_path = _require(Path(args.manifest), "pass --manifest pointing at a dataset manifest")
    manifest = ingestion.load_manifest(manifest_path)
    base = manifest_path.parent

    rows = []
    for rel in manifest.annotation_files:
        path = _require(base / rel, "annotation file listed in the manifest is absent")
        with open(path) as fh:
            if args.boris:
                rows.extend(ingestion.read_boris_export(fh))
            else:
                rows.extend(ingestion.read_annotation_csv(fh))
    # one pass over the pooled rows keeps observations unique per
    # (lecture, observer) even when one observer spans several files
    observations = ingestion.parse_annotations(rows)

    transcripts = []
    for rel in manifest.transcript_files:
        path = _require(base / rel, "transcript file listed in the manifest is absent")
        with open(path) as fh:
            transcripts.extend(ingestion.parse_transcript(fh))

    known = {m.lecture_id for m in manifest.lectures}
    referenced = {o.lecture_id for o in observations} | {t.lecture_id for t in transcripts}
    unknown = referenced - known
    if unknown:
        raise CliError("UnknownLecture",
                       f"files reference lectures missing from the manifest: "
                       f"{sorted(unknown)}")

    violations = []
    for obs in observations:
        meta = manifest.lecture(obs.lecture_id)
        violations.extend(
            {"lecture_id": obs.lecture_id, "observer_id": obs.observer_id,
             "code": v.code, "message": v.message, "event_index": v.event_index}
            for v in validate_observation(obs, meta))

    obs_path = out / "observations.jsonl"
    with open(obs_path, "w") as fh:
        ingestion.serialize_observations(observations, fh)
    tr_path = out / "transcripts.jsonl"
    with open(tr_path, "w") as fh:
        ingestion.serialize_transcript(transcripts, fh)
    local_manifest = out / "manifest.json"
    ingestion.save_manifest(manifest, local_manifest)
    violations_path = out / "violations.json"
    violations_path.write_text(json.dumps(violations, indent=2, sort_keys=True) + "\n")

    inputs = [manifest_path] + [base / r for r in manifest.annotation_files] + \
             [base / r for r in manifest.transcript_files]
    _write_stage(out, "ingest", {"manifest": str(manifest_path), "boris": args.boris},
                 inputs, [obs_path, tr_path, local_manifest, violations_path])
    print(f"ingested {len(observations)} observations, {len(transcripts)} transcript events"
          f" ({len(violations)} violations; see violations.json)")
    return 0


def cmd_label(args) -> int:
    out = _out_dir(args)
    obs_path = _require(out / "observations.jsonl", "run 'lectkit synth' or 'lectkit ingest' first")
    tr_path = _require(out / "transcripts.jsonl", "run 'lectkit synth' or 'lectkit ingest' first")
    with open(obs_path) as fh:
        observations = ingestion.parse_observations(fh)
    with open(tr_path) as fh:
        transcripts = ingestion.parse_transcript(fh)

    policy = LabelPolicy(args.policy)
    samples = labeling.label_transcripts(transcripts, observations, policy)
    labeled_path = out / "labeled.jsonl"
    with open(labeled_path, "w") as fh:
        labeling.serialize_labeled(samples, fh)
    outputs = [labeled_path]

    if args.frames:
        manifest_path = _require(out / "manifest.json", "lecture metadata required for frame sampling")
        manifest = ingestion.load_manifest(manifest_path)
        specs = labeling.select_frame_samples(observations, manifest.lectures,
                                              reintersect=not args.single_label_frames)
        specs_path = out / "frame_specs.jsonl"
        with open(specs_path, "w") as fh:
            labeling.serialize_frame_specs(specs, fh)
        frames_meta = out / "frames_meta.json"
        frames_meta.write_text(json.dumps(
            {m.lecture_id: m.series_id for m in manifest.lectures},
            indent=2, sort_keys=True) + "\n")
        outputs += [specs_path, frames_meta]

    _write_stage(out, "label", {"policy": args.policy, "frames": args.frames,
                                "single_label_frames": args.single_label_frames},
                 [obs_path, tr_path], outputs)
    print(f"labeled {len(samples)} transcript events (policy={args.policy})")
    return 0


def cmd_split(args) -> int:
    out = _out_dir(args)
    labeled_path = _require(out / "labeled.jsonl", "run 'lectkit label' first")
    with open(labeled_path) as fh:
        samples = labeling.parse_labeled(fh)

    if args.group_by == "observer":
        keys = splitting.observer_component_keys(samples)
    elif args.group_by == "lecture":
        keys = [s.transcript.lecture_id for s in samples]
    else:
        raise CliError("UsageError", f"--group-by {args.group_by} not valid for text samples",
                       exit_code=2)

    manifest = splitting.split(keys, group_by=args.group_by,
                               ratios=tuple(args.ratios), seed=args.seed)
    split_path = out / "split.json"
    splitting.save_split_manifest(manifest, split_path)
    _write_stage(out, "split", {"group_by": args.group_by, "seed": args.seed,
                                "ratios": list(args.ratios)},
                 [labeled_path], [split_path])
    realized = ", ".join(f"{name}={frac:.3f}" for name, frac
                         in zip(splitting.SPLITS, manifest.realized))
    print(f"split {len(samples)} samples by {args.group_by}: {realized}")
    return 0


def _load_split_samples(out: Path) -> tuple[dict[str, list], Path, Path]:
    labeled_path = _require(out / "labeled.jsonl", "run 'lectkit label' first")
    split_path = _require(out / "split.json", "run 'lectkit split' first")
    with open(labeled_path) as fh:
        samples = labeling.parse_labeled(fh)
    manifest = splitting.load_split_manifest(split_path)
    if manifest.group_by == "observer":
        keys = splitting.observer_component_keys(samples)
    else:
        keys = [s.transcript.lecture_id for s in samples]
    return splitting.partition(samples, keys, manifest), labeled_path, split_path


def cmd_stats(args) -> int:
    out = _out_dir(args)
    splits, labeled_path, split_path = _load_split_samples(out)
    stats = splitting.compute_stats(splits)
    stats_json_path = out / "stats.json"
    stats_json_path.write_text(json.dumps(splitting.stats_json(stats),
                                          indent=2, sort_keys=True) + "\n")
    stats_txt_path = out / "stats.txt"
    stats_txt_path.write_text(splitting.stats_table(stats))
    _write_stage(out, "stats", {}, [labeled_path, split_path],
                 [stats_json_path, stats_txt_path])
    print(splitting.stats_table(stats), end="")
    return 0


def _train_config(args) -> nncore.TrainConfig:
    return nncore.TrainConfig(
        learning_rate=args.learning_rate, batch_size=args.batch_size,
        max_epochs=args.epochs, early_stop_patience=args.patience,
        seed=args.seed, repeats=args.repeats)


def cmd_train_text(args) -> int:
    out = _out_dir(args)
    splits, labeled_path, split_path = _load_split_samples(out)
    task = TaskSpec(TaskKind(args.task))
    kind = ModelKind(args.model)
    config = _train_config(args)

    model = textmodels.train_text_model(kind, task, splits, config,
                                        loss_variant=args.loss,
                                        downsample_ratio=args.downsample_ratio,
                                        epsilon=args.epsilon)
    if args.tune_thresholds:
        textmodels.tune_thresholds(model, splits["dev"])

    model_path = out / f"model_{args.model}_{args.task}.nnck"
    textmodels.save_text_model(model, model_path, meta={
        "seed": args.seed, "loss": args.loss, "split_manifest": _sha256(split_path)})
    _write_stage(out, f"train-text-{args.model}-{args.task}", {
        "model": args.model, "task": args.task, "loss": args.loss,
        "seed": args.seed, "epochs": args.epochs, "learning_rate": args.learning_rate,
        "batch_size": args.batch_size, "patience": args.patience,
        "downsample_ratio": args.downsample_ratio, "epsilon": args.epsilon,
        "tune_thresholds": args.tune_thresholds,
    }, [labeled_path, split_path], [model_path])
    print(f"trained {args.model} on task={args.task}; model at {model_path.name}")
    return 0


def cmd_train_mtl(args) -> int:
    out = _out_dir(args)
    emb_path = _require(out / "embeddings.lemb",
                        "run 'lectkit synth --frames N' or the extractor first")
    specs_path = _require(out / "frame_specs.jsonl", "frame specs are missing")
    meta_path = _require(out / "frames_meta.json", "lecture/series map is missing")

    _, emb_records = mtlvision.read_embeddings(emb_path)
    with open(specs_path) as fh:
        specs = labeling.parse_frame_specs(fh)
    series_of = json.loads(meta_path.read_text())
    records = mtlvision.frames_from_embeddings(emb_records, specs)
    keys = [series_of[r.lecture_id] for r in records]

    manifest = splitting.split(keys, group_by="series", seed=args.seed)
    splits = splitting.partition(records, keys, manifest)
    config = _train_config(args)
    result = mtlvision.train_mtl(splits, loss_variant=args.loss, config=config,
                                 encoder_hidden=args.encoder_hidden,
                                 encoder_out=args.encoder_out,
                                 classifier_hidden=args.classifier_hidden)

    model_paths = []
    for i, model in enumerate(result.models):
        prefix = out / f"mtl_r{i}"
        mtlvision.save_mtl_model(model, prefix, meta={"repeat": i, "loss": args.loss})
        model_paths += [Path(f"{prefix}.encoder.nnck"), Path(f"{prefix}.classifier.nnck")]

    pairs = mtlvision.confusion_pairs(result.models, splits["test"])
    metrics_path = out / "mtl_metrics.json"
    metrics_path.write_text(json.dumps({
        "summary": result.summary(),
        "repeats": [r.to_json() for r in result.reports],
        "split": {"realized": list(manifest.realized), "seed": args.seed},
        "confusion_pairs": pairs.tolist(),
        "confusion_order": [f.code for f in mtlvision.VISUAL_FEATURES],
    }, indent=2, sort_keys=True) + "\n")

    _write_stage(out, "train-mtl", {
        "loss": args.loss, "seed": args.seed, "repeats": args.repeats,
        "epochs": args.epochs, "learning_rate": args.learning_rate,
        "batch_size": args.batch_size, "patience": args.patience,
        "encoder_hidden": args.encoder_hidden, "encoder_out": args.encoder_out,
        "classifier_hidden": args.classifier_hidden,
    }, [emb_path, specs_path, meta_path], model_paths + [metrics_path])
    summary = result.summary()
    print(f"trained {len(result.models)} repeats; balanced accuracy "
          f"{summary['balanced_accuracy_mean']:.3f} +- {summary['balanced_accuracy_std']:.3f}")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    splits, labeled_path, split_path = _load_split_samples(out)
    model_path = _require(out / f"model_{args.model}_{args.task}.nnck",
                          "run 'lectkit train-text' first")
    model = textmodels.load_text_model(model_path)
    task = model.task

    test = splits["test"]
    predictions = np.stack([textmodels.classify(model, s) for s in test])
    targets = task.target_matrix(test)
    report = evaluation.evaluate_predictions(
        predictions, targets, task.classes,
        meta={"model": args.model, "task": args.task, "seed": args.seed,
              "split_manifest": _sha256(split_path)})

    eval_path = out / f"eval_{args.model}_{args.task}.json"
    eval_path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    _write_stage(out, f"eval-{args.model}-{args.task}",
                 {"model": args.model, "task": args.task, "seed": args.seed},
                 [labeled_path, split_path, model_path], [eval_path])
    if task.kind is TaskKind.QUESTIONS_ONLY:
        m = report.per_class["Q"]
        print(f"{args.model}/{args.task}: accuracy={report.accuracy:.3f} "
              f"precision={m.precision:.3f} recall={m.recall:.3f} f1={m.f1:.3f}")
    else:
        f1s = " ".join(f"{name}={report.per_class[name].f1:.2f}" for name in task.classes)
        print(f"{args.model}/{args.task}: {f1s}")
    return 0


def cmd_curve(args) -> int:
    out = _out_dir(args)
    splits, labeled_path, split_path = _load_split_samples(out)
    task = TaskSpec(TaskKind(args.task))
    kind = ModelKind(args.model)
    config = _train_config(args)
    fractions = _parse_fractions(args.fractions)

    test = splits["test"]
    targets = task.target_matrix(test)
    train_samples = splits["train"]
    keys = [s.transcript.lecture_id for s in train_samples]

    def trainer(subset) -> float:
        sub_splits = {"train": subset, "dev": splits["dev"], "test": test}
        model = textmodels.train_text_model(kind, task, sub_splits, config,
                                            downsample_ratio=args.downsample_ratio,
                                            epsilon=args.epsilon)
        predictions = np.stack([textmodels.classify(model, s) for s in test])
        report = evaluation.evaluate_predictions(predictions, targets, task.classes)
        f1s = [m.f1 for m in report.per_class.values() if m.f1_defined]
        return float(np.mean(f1s)) if f1s else 0.0

    if task.kind is TaskKind.QUESTIONS_ONLY:
        def is_positive(s):
            return bool(s.labels & {"AQ", "GQ"})
    else:
        def is_positive(s):
            return bool(s.labels)

    points = evaluation.learning_curve(trainer, train_samples, keys,
                                       fractions=fractions, seed=args.seed,
                                       is_positive=is_positive)
    curve_path = out / f"curve_{args.model}_{args.task}.json"
    curve_path.write_text(json.dumps(
        {"fractions": [f for f, _ in points], "f1": [v for _, v in points],
         "model": args.model, "task": args.task, "seed": args.seed},
        indent=2, sort_keys=True) + "\n")
    _write_stage(out, f"curve-{args.model}-{args.task}",
                 {"model": args.model, "task": args.task, "seed": args.seed,
                  "fractions": fractions},
                 [labeled_path, split_path], [curve_path])
    print(" ".join(f"{f:.1f}:{v:.3f}" for f, v in points))
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args)
    labeled_path = _require(out / "labeled.jsonl", "run 'lectkit label' first")
    with open(labeled_path) as fh:
        samples = labeling.parse_labeled(fh)

    eval_files = sorted(out.glob("eval_*.json"))
    if not eval_files:
        raise _missing(out / "eval_*.json", "run 'lectkit eval' first")
    evals = [json.loads(p.read_text()) for p in eval_files]
    inputs = [labeled_path] + eval_files

    questions_rows = []
    full_rows = []
    for ev in evals:
        meta = ev.get("meta", {})
        if meta.get("task") == TaskKind.QUESTIONS_ONLY.value:
            m = ev["per_class"]["Q"]
            questions_rows.append((meta.get("model", "?"), ev["accuracy"],
                                   m["precision"], m["recall"], m["f1"]))
        else:
            full_rows.append((meta.get("model", "?"),
                              {c: ev["per_class"][c]["f1"] for c in ev["classes"]}))

    agreement = evaluation.questionmark_agreement(samples)

    correlation = None
    best_f1: dict[str, float] = {}
    for _, f1s in full_rows:
        for code, value in f1s.items():
            best_f1[code] = max(best_f1.get(code, 0.0), value)
    if len(best_f1) >= 3:
        obs_path = out / "observations.jsonl"
        if obs_path.exists():
            with open(obs_path) as fh:
                observations = ingestion.parse_observations(fh)
            durations = evaluation.cumulative_feature_durations(observations)
            pairs = [(durations.get(code, 0.0), best_f1[code]) for code in sorted(best_f1)]
            pearson, spearman, n = evaluation.duration_score_correlation(pairs)
            correlation = {"pearson": pearson, "spearman": spearman, "n_features": n,
                           "pairs": {code: {"duration_s": durations.get(code, 0.0),
                                            "best_f1": best_f1[code]}
                                     for code in sorted(best_f1)}}
            inputs.append(obs_path)

    lines = []
    if questions_rows:
        lines.append("Question-detection task")
        lines.append(f"{'Model':<12}{'Accuracy':>10}{'Precision':>11}{'Recall':>9}{'F1':>7}")
        for name, acc, p, r, f1 in sorted(questions_rows):
            lines.append(f"{name:<12}{acc:>10.3f}{p:>11.3f}{r:>9.3f}{f1:>7.3f}")
        lines.append("")
    if full_rows:
        codes = [f.code for f in TEXT_FEATURES]
        lines.append("Full task (per-class F1)")
        lines.append(f"{'Model':<12}" + "".join(f"{c:>7}" for c in codes))
        for name, f1s in sorted(full_rows):
            lines.append(f"{name:<12}" + "".join(f"{f1s.get(c, 0.0):>7.2f}" for c in codes))
        lines.append("")
    if agreement.rate is not None:
        lines.append(f"Question-mark sentences: {agreement.n_question_mark_sentences}, "
                     f"in question-labeled samples: {agreement.n_labeled_questions} "
                     f"(agreement {agreement.rate:.2f})")
    else:
        lines.append("Question-mark sentences: none found; agreement undefined")
    if correlation:
        lines.append(f"Duration/score correlation over {correlation['n_features']} features: "
                     f"Pearson {correlation['pearson']:.3f}, "
                     f"Spearman {correlation['spearman']:.3f}")

    report = {
        "questions_task": [
            {"model": name, "accuracy": acc, "precision": p, "recall": r, "f1": f1}
            for name, acc, p, r, f1 in sorted(questions_rows)
        ],
        "full_task": [{"model": name, "f1": f1s} for name, f1s in sorted(full_rows)],
        "questionmark_agreement": {
            "n_question_mark_sentences": agreement.n_question_mark_sentences,
            "n_labeled_questions": agreement.n_labeled_questions,
            "rate": agreement.rate,
        },
        "duration_score_correlation": correlation,
    }
    report_json = out / "report.json"
    report_json.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    report_txt = out / "report.txt"
    report_txt.write_text("\n".join(lines) + "\n")
    outputs = [report_json, report_txt]

    if args.timeline:
        obs_path = _require(out / "observations.jsonl",
                            "timeline export needs ingested/synthesized annotations")
        with open(obs_path) as fh:
            observations = ingestion.parse_observations(fh)
        timeline_path = out / "timeline.jsonl"
        with open(timeline_path, "w") as fh:
            evaluation.export_feature_timeline(observations, fh)
        if obs_path not in inputs:
            inputs.append(obs_path)
        outputs.append(timeline_path)

    _write_stage(out, "report", {"timeline": args.timeline}, inputs, outputs)
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="pipeline output directory")
    parser.add_argument("--seed", type=int, default=0, help="random seed")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--learning-rate", type=float, default=0.5,
                        help="SGD learning rate")
    parser.add_argument("--batch-size", type=int, default=32, help="mini-batch size")
    parser.add_argument("--epochs", type=int, default=30, help="maximum training epochs")
    parser.add_argument("--patience", type=int, default=8,
                        help="epochs without dev improvement before stopping")
    parser.add_argument("--repeats", type=int, default=1, help="independent training repeats")
    parser.add_argument("--downsample-ratio", type=float, default=1.0,
                        help="majority samples kept per minority sample")
    parser.add_argument("--epsilon", type=float, default=0.05,
                        help="bandit exploration rate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lectkit",
        description="Lecture-analytics pipeline: datasets, detectors, evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(fn=fn)
        _add_common(p)
        return p

    p = add("synth", cmd_synth, "generate a deterministic synthetic corpus")
    p.add_argument("--lectures", type=int, default=5, help="number of lectures")
    p.add_argument("--events", type=int, default=200, help="transcript events per lecture")
    p.add_argument("--prevalence", action="append", default=[],
                   metavar="CODE=P", help="feature prevalence, e.g. AQ=0.15 (repeatable)")
    p.add_argument("--observer-teams", type=int, default=1,
                   help="disjoint annotator teams round-robined over lectures")
    p.add_argument("--question-noise", type=float, default=0.0,
                   help="chance an unlabeled sentence still ends with '?'")
    p.add_argument("--series-size", type=int, default=4, help="lectures per course series")
    p.add_argument("--frames", type=int, default=0,
                   help="also generate this many synthetic frame embeddings")
    p.add_argument("--embedding-dim", type=int, default=64,
                   help="synthetic embedding dimension")

    p = add("ingest", cmd_ingest, "parse annotation exports and transcripts")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--boris", action="store_true",
                   help="annotation files are BORIS-style aggregated exports")

    p = add("label", cmd_label, "label transcript events by interval intersection")
    p.add_argument("--policy", choices=["union", "majority"], default="union",
                   help="observer pooling policy")
    p.add_argument("--frames", action="store_true",
                   help="also emit frame sampling specs for the visual task")
    p.add_argument("--single-label-frames", action="store_true",
                   help="keep only the generating feature per frame spec")

    p = add("split", cmd_split, "grouped train/dev/test split")
    p.add_argument("--group-by", choices=["observer", "lecture"], default="observer",
                   help="group key for leakage-free splitting")
    p.add_argument("--ratios", type=float, nargs=3,
                   default=list(splitting.DEFAULT_RATIOS),
                   help="train/dev/test target fractions")

    add("stats", cmd_stats, "per-split dataset statistics")

    p = add("train-text", cmd_train_text, "train a text detector")
    p.add_argument("--model", choices=[k.value for k in ModelKind], default="tfidf",
                   help="detector family")
    p.add_argument("--task", choices=[k.value for k in TaskKind], default="questions",
                   help="prediction task")
    p.add_argument("--loss", choices=["plain", "weighted"], default="weighted",
                   help="plain or class-weighted cross-entropy")
    p.add_argument("--tune-thresholds", action="store_true",
                   help="pick per-class thresholds on the dev split")
    _add_train_flags(p)

    p = add("train-mtl", cmd_train_mtl, "train the multi-view visual classifier")
    p.add_argument("--loss", choices=["plain", "weighted"], default="weighted",
                   help="plain or class-weighted cross-entropy")
    p.add_argument("--encoder-hidden", type=int, default=256, help="encoder hidden width")
    p.add_argument("--encoder-out", type=int, default=256, help="encoder output dimension")
    p.add_argument("--classifier-hidden", type=int, default=128,
                   help="classifier hidden width")
    _add_train_flags(p)

    p = add("eval", cmd_eval, "evaluate a trained text model on the test split")
    p.add_argument("--model", choices=[k.value for k in ModelKind], default="tfidf",
                   help="detector family")
    p.add_argument("--task", choices=[k.value for k in TaskKind], default="questions",
                   help="prediction task")

    p = add("curve", cmd_curve, "learning curve over training-set fractions")
    p.add_argument("--model", choices=[k.value for k in ModelKind], default="tfidf",
                   help="detector family")
    p.add_argument("--task", choices=[k.value for k in TaskKind], default="questions",
                   help="prediction task")
    p.add_argument("--fractions", default="0.1..1.0",
                   help="'lo..hi' with step 0.1, or a comma list")
    _add_train_flags(p)

    p = add("report", cmd_report, "aggregate evaluations into tables and diagnostics")
    p.add_argument("--timeline", action="store_true",
                   help="also export per-feature labeled intervals as JSON-lines")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("LECTKIT_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ingestion.AnnotationParseError, ingestion.TranscriptParseError) as exc:
        print(f"ParseError: {exc}", file=sys.stderr)
        return 1
    except labeling.UnknownLecture as exc:
        print(f"UnknownLecture: {exc}", file=sys.stderr)
        return 1
    except splitting.TooFewGroups as exc:
        print(f"TooFewGroups: {exc}", file=sys.stderr)
        return 1
    except splitting.EmptySplit as exc:
        print(f"EmptySplit: {exc}", file=sys.stderr)
        return 1
    except evaluation.FractionTooSmall as exc:
        print(f"FractionTooSmall: {exc}", file=sys.stderr)
        return 1
    except (nncore.Divergence, textmodels.EmptyCorpus, textmodels.ModelNotTrained) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
