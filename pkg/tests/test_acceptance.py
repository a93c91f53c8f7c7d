"""Acceptance suite: one test per primary criterion, each printing a verdict line.

Run with `pytest tests/test_acceptance.py -s` to see the PASS/FAIL lines.
"""

import hashlib
import time
from pathlib import Path

import numpy as np
import pytest

from lectkit import nncore
from lectkit.cli import main as cli_main
from lectkit.core import TEXT_FEATURES, intersects
from lectkit.evaluation import evaluate_predictions, learning_curve
from lectkit.ingestion import SynthConfig, generate_synthetic
from lectkit.labeling import LabelPolicy, label_transcripts
from lectkit.mtlvision import (
    FrameSynthConfig,
    MtlModel,
    generate_synthetic_frames,
    train_mtl,
)
from lectkit.nncore import (
    Activation,
    DenseNet,
    LossKind,
    LossSpec,
    TrainConfig,
    balanced_pos_weights,
    finite_difference_error,
    gradient_check,
)
from lectkit.splitting import DEFAULT_RATIOS, partition, split
from lectkit.textmodels import ModelKind, TaskKind, TaskSpec, predict, train_text_model

QUESTIONS = TaskSpec(TaskKind.QUESTIONS_ONLY)


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Shared corpora
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def planted_corpus():
    """10,000 transcript events over 50 lectures; positives are exactly the
    '?'-bearing events at 15% prevalence."""
    config = SynthConfig(seed=11, n_lectures=50, events_per_lecture=200,
                         feature_prevalences={"AQ": 0.15})
    corpus = generate_synthetic(config)
    samples = label_transcripts(corpus.transcripts, corpus.observations)
    keys = [s.transcript.lecture_id for s in samples]
    manifest = split(keys, group_by="lecture", seed=0)
    return partition(samples, keys, manifest)


def _questions_f1(model, samples) -> float:
    scores = np.stack([predict(model, s) for s in samples])
    report = evaluate_predictions(scores >= 0.5, QUESTIONS.target_matrix(samples),
                                  QUESTIONS.classes)
    return report.per_class["Q"].f1


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def test_labeling_oracle_equivalence():
    config = SynthConfig(seed=21, n_lectures=5, events_per_lecture=200,
                         feature_prevalences={"AQ": 0.1, "GQ": 0.05, "AT": 0.1},
                         observer_miss_rate=0.3, observers_per_lecture=3)
    corpus = generate_synthetic(config)
    n_annotation_events = sum(len(o.events) for o in corpus.observations)
    assert len(corpus.transcripts) >= 1000
    assert n_annotation_events >= 200
    assert len({t.lecture_id for t in corpus.transcripts}) >= 5

    start = time.perf_counter()
    got = label_transcripts(corpus.transcripts, corpus.observations, LabelPolicy.UNION)
    elapsed = time.perf_counter() - start

    text_codes = {f.code for f in TEXT_FEATURES}
    expected = []
    for tr in sorted(corpus.transcripts, key=lambda t: (t.lecture_id, t.span.start_s)):
        labels = set()
        for obs in corpus.observations:
            if obs.lecture_id != tr.lecture_id:
                continue
            for ev in obs.events:
                if ev.feature.code in text_codes and intersects(tr.span, ev.span):
                    labels.add(ev.feature.code)
        expected.append(frozenset(labels))

    identical = [s.labels for s in got] == expected
    _verdict("labeling oracle equivalence", identical and elapsed < 1.0,
             f"{len(got)} samples vs {n_annotation_events} events, "
             f"identical={identical}, runtime={elapsed:.3f}s (< 1 s)")


def test_split_invariants_over_100_seeds():
    rng = np.random.default_rng(0)
    sizes = rng.integers(1, 60, size=50)
    keys = [f"g{i:02d}" for i, size in enumerate(sizes) for _ in range(size)]
    total = len(keys)
    worst = 0.0
    for seed in range(100):
        manifest = split(keys, seed=seed)
        assert sorted(manifest.assignment) == sorted(set(keys))
        parts = partition(list(range(total)), keys, manifest)
        assert sorted(i for chunk in parts.values() for i in chunk) == list(range(total))
        for name, members in partition(keys, keys, manifest).items():
            assert all(manifest.assignment[g] == name for g in members)
        worst = max(worst, max(abs(r - t) for r, t
                               in zip(manifest.realized, DEFAULT_RATIOS)))
    _verdict("split invariants", worst <= 0.10,
             f"100 seeds x 50 uneven groups, max |realized-target| = {worst:.3f} (<= 0.10)")


TABLE_FIXTURES = [
    ("BERT", 0.332, 0.453, 0.383),
    ("VowpalWabbit", 0.481, 0.387, 0.429),
    ("FastText", 0.442, 0.321, 0.373),
    ("RoBERTa", 0.116, 1.00, 0.207),
    ("XLNet", 0.177, 0.459, 0.255),
    ("TF-IDF", 0.461, 0.100, 0.164),
]


def test_metric_fixtures():
    worst = 0.0
    for name, p, r, f1 in TABLE_FIXTURES:
        computed = 2 * p * r / (p + r)
        worst = max(worst, abs(computed - f1))
    _verdict("metric fixtures", worst <= 0.002,
             f"six published (P,R)->F1 rows, max error {worst:.4f} (<= 0.002)")


def test_gradient_correctness_all_architectures():
    rng = np.random.default_rng(3)
    worst = 0.0

    # tf-idf head shape (vocabulary width reduced, same depth/activations)
    for n_out in (1, 6):
        net = DenseNet.create([40, 64, n_out],
                              [Activation.LEAKY_RELU, Activation.SIGMOID], seed=1)
        err = gradient_check(net, LossSpec(LossKind.BINARY_CROSS_ENTROPY,
                                           rng.uniform(0.5, 3.0, n_out)),
                             (rng.normal(size=40), (rng.random(n_out) < 0.5).astype(float)))
        worst = max(worst, err)

    # fast-style linear head
    net = DenseNet.create([32, 1], [Activation.SIGMOID], seed=2)
    err = gradient_check(net, LossSpec(LossKind.BINARY_CROSS_ENTROPY),
                         (rng.normal(size=32), np.array([1.0])))
    worst = max(worst, err)

    # the mtl stack at its acceptance dimensions, through the max-pool junction
    model = MtlModel.create(64, LossSpec(LossKind.BINARY_CROSS_ENTROPY,
                                         rng.uniform(0.5, 3.0, 9)),
                            encoder_hidden=64, encoder_out=64,
                            classifier_hidden=32, seed=5)
    cam, scr = rng.normal(size=(1, 64)), rng.normal(size=(1, 64))
    y = (rng.random((1, 9)) < 0.4).astype(float)
    scores, caches = model._forward_cached(cam, scr)
    _, d_scores = nncore.loss_and_grad(model.loss_spec, scores, y)
    grads = model._backward(caches, d_scores)

    def loss_fn():
        s, _ = model._forward_cached(cam, scr)
        return nncore.loss(model.loss_spec, s, y)

    err = finite_difference_error(loss_fn, model.parameters(), grads)
    worst = max(worst, err)
    _verdict("gradient correctness", worst < 1e-4,
             f"max relative error {worst:.2e} across all architectures (< 1e-4)")


def test_planted_rule_text_task(planted_corpus):
    start = time.perf_counter()
    config = TrainConfig(learning_rate=0.5, batch_size=32, max_epochs=30,
                         early_stop_patience=5, seed=1)
    f1 = {}
    for kind in (ModelKind.TFIDF, ModelKind.FASTSTYLE, ModelKind.BANDIT):
        model = train_text_model(kind, QUESTIONS, planted_corpus, config)
        f1[kind.value] = _questions_f1(model, planted_corpus["test"])
    elapsed = time.perf_counter() - start
    ok = (f1["tfidf"] >= 0.95 and f1["faststyle"] >= 0.95
          and f1["bandit"] >= 0.85 and elapsed < 300)
    _verdict("planted-rule text task", ok,
             f"tfidf={f1['tfidf']:.3f} (>=0.95) faststyle={f1['faststyle']:.3f} (>=0.95) "
             f"bandit={f1['bandit']:.3f} (>=0.85), total {elapsed:.0f}s (< 300 s)")


def test_imbalance_direction():
    def make(rng, n):
        y = (rng.random(n) < 1 / 21).astype(float)  # 1:20
        center = np.where(y[:, None] > 0, 1.0, -1.0) * np.full(4, 0.6)
        return center + rng.normal(scale=2.0, size=(n, 4)), y[:, None]

    rng = np.random.default_rng(100)
    x, y = make(rng, 6000)
    dev = make(rng, 1500)
    test = make(rng, 1500)

    def minority_recall(weights):
        net = DenseNet.create([4, 16, 1], [Activation.LEAKY_RELU, Activation.SIGMOID],
                              seed=7)
        config = TrainConfig(learning_rate=0.3, batch_size=32, max_epochs=30,
                             early_stop_patience=6, seed=7)
        nncore.train(net, (x, y), dev, LossSpec(LossKind.BINARY_CROSS_ENTROPY, weights),
                     config)
        pred = net.forward(test[0]) >= 0.5
        truth = test[1] > 0.5
        return float((pred & truth).sum() / truth.sum())

    plain = minority_recall(None)
    weighted = minority_recall(balanced_pos_weights(y))
    gain = 100 * (weighted - plain)
    _verdict("imbalance behavior", gain >= 10.0,
             f"minority recall {plain:.3f} -> {weighted:.3f} at equal seeds, "
             f"+{gain:.1f} pts (>= 10)")


def test_mtl_head():
    config = FrameSynthConfig(seed=5, n_frames=5000, embedding_dim=64)
    records, keys = generate_synthetic_frames(config)
    manifest = split(keys, group_by="series", seed=0)
    splits = partition(records, keys, manifest)
    train_config = TrainConfig(learning_rate=0.3, batch_size=64, max_epochs=40,
                               early_stop_patience=8, seed=3, repeats=5)
    result = train_mtl(splits, loss_variant="weighted", config=train_config,
                       encoder_hidden=64, encoder_out=64, classifier_hidden=32)
    mean_balanced = result.summary()["balanced_accuracy_mean"]

    cams = np.stack([r.camera for r in splits["test"]])
    scrs = np.stack([r.screen for r in splits["test"]])
    invariant = all(
        np.array_equal(m.forward_batch(cams, scrs), m.forward_batch(scrs, cams))
        for m in result.models)
    _verdict("mtl head", mean_balanced >= 0.90 and invariant,
             f"mean balanced accuracy {mean_balanced:.3f} over 5 repeats (>= 0.90), "
             f"view-order invariance on every test frame: {invariant}")


def test_learning_curve(planted_corpus):
    config = TrainConfig(learning_rate=0.5, batch_size=32, max_epochs=10,
                         early_stop_patience=3, seed=2)
    test_samples = planted_corpus["test"]

    def trainer(subset):
        sub = {"train": subset, "dev": planted_corpus["dev"], "test": test_samples}
        model = train_text_model(ModelKind.FASTSTYLE, QUESTIONS, sub, config)
        return _questions_f1(model, test_samples)

    train_samples = planted_corpus["train"]
    keys = [s.transcript.lecture_id for s in train_samples]
    fractions = [round(0.1 * k, 1) for k in range(1, 11)]
    points = learning_curve(trainer, train_samples, keys, fractions=fractions, seed=0,
                            is_positive=lambda s: bool(s.labels & {"AQ", "GQ"}))
    f1s = [v for _, v in points]
    endpoint_ok = f1s[-1] >= f1s[0]
    band_ok = all(f1s[i + 1] >= f1s[i] - 0.05 for i in range(len(f1s) - 1))
    _verdict("learning curve", endpoint_ok and band_ok,
             f"F1 at 1.0 = {f1s[-1]:.3f} >= F1 at 0.1 = {f1s[0]:.3f}; "
             f"10-point curve monotone within +-0.05: {band_ok}")


def test_end_to_end_determinism(tmp_path):
    def run_pipeline(out: Path):
        steps = [
            ["synth", "--out", str(out), "--seed", "7", "--lectures", "8",
             "--events", "60", "--prevalence", "AQ=0.2"],
            ["label", "--out", str(out)],
            ["split", "--out", str(out), "--group-by", "lecture"],
            ["train-text", "--out", str(out), "--model", "tfidf",
             "--task", "questions", "--epochs", "8", "--patience", "3"],
            ["eval", "--out", str(out), "--model", "tfidf", "--task", "questions"],
            ["report", "--out", str(out)],
        ]
        for step in steps:
            assert cli_main(step) == 0, step
        return {
            str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*")) if p.is_file()
        }

    first = run_pipeline(tmp_path / "run1")
    second = run_pipeline(tmp_path / "run2")
    identical = first == second
    _verdict("end-to-end determinism", identical,
             f"synth->label->split->train-text->eval->report twice, "
             f"{len(first)} artifacts byte-identical: {identical}")
