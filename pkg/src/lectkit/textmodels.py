"""The three classically-implementable text detectors and their two tasks.

Models: a TF-IDF n-gram representation feeding a small dense head, a
fastText-style classifier (mean of hashed n-gram embeddings into a linear
layer) balanced by majority downsampling, and a cost-sensitive
one-against-all contextual bandit with epsilon-greedy exploration.

The binary question task predicts whether a sample carries AQ or GQ; the
full task predicts all six text features independently (multi-label). ASR
transcription errors are in-scope noise: no normalization beyond
lowercasing.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import nncore
from .core import TEXT_FEATURES
from .evaluation import ConfusionCounts, binary_metrics
from .labeling import LabeledTextSample
from .nncore import (
    Activation,
    ArraySource,
    BatchSource,
    DenseNet,
    LossKind,
    LossSpec,
    TrainConfig,
    balanced_pos_weights,
)

_TOKEN = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")

HASH_BUCKETS = 2 ** 18
TFIDF_MAX_VOCAB = 10_000
NGRAM_RANGE = (1, 2)


class ModelNotTrained(Exception):
    pass


class EmptyCorpus(Exception):
    pass


class ModelKind(Enum):
    TFIDF = "tfidf"
    FASTSTYLE = "faststyle"
    BANDIT = "bandit"


class TaskKind(Enum):
    QUESTIONS_ONLY = "questions"
    FULL_TEXT = "full"


@dataclass(frozen=True)
class TaskSpec:
    """Binary question detection, or 6-way multi-label over the text features."""

    kind: TaskKind

    @property
    def classes(self) -> tuple[str, ...]:
        if self.kind is TaskKind.QUESTIONS_ONLY:
            return ("Q",)
        return tuple(f.code for f in TEXT_FEATURES)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def targets(self, labels: frozenset[str]) -> np.ndarray:
        if self.kind is TaskKind.QUESTIONS_ONLY:
            return np.array([1.0 if labels & {"AQ", "GQ"} else 0.0])
        return np.array([1.0 if f.code in labels else 0.0 for f in TEXT_FEATURES])

    def target_matrix(self, samples: Sequence[LabeledTextSample]) -> np.ndarray:
        return np.array([self.targets(s.labels) for s in samples])


def tokenize(text: str) -> list[str]:
    """Lowercase and split words from punctuation; every mark is its own token."""
    return _TOKEN.findall(text.lower())


def ngrams(tokens: Sequence[str],
           n_range: tuple[int, int] = NGRAM_RANGE) -> list[str]:
    """All n-grams in the given length range, joined with single spaces."""
    lo, hi = n_range
    out = []
    for n in range(lo, hi + 1):
        out.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return out


def stable_bucket(ngram: str, buckets: int = HASH_BUCKETS) -> int:
    """Process-independent hashing-trick bucket for an n-gram."""
    digest = hashlib.blake2b(ngram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


# ---------------------------------------------------------------------------
# TF-IDF
# ---------------------------------------------------------------------------


def fit_tfidf(texts: Sequence[str], max_vocab: int = TFIDF_MAX_VOCAB
              ) -> tuple[dict[str, int], np.ndarray]:
    """Build the n-gram vocabulary and idf vector from the training split only.

    The most document-frequent n-grams are kept (ties broken
    lexicographically); idf(t) = ln((1+N)/(1+df(t))) + 1.
    """
    if not texts:
        raise EmptyCorpus("cannot fit a vocabulary on an empty corpus")
    df: Counter[str] = Counter()
    for text in texts:
        df.update(set(ngrams(tokenize(text))))
    ranked = sorted(df, key=lambda g: (-df[g], g))[:max_vocab]
    vocabulary = {g: i for i, g in enumerate(sorted(ranked))}
    n = len(texts)
    idf = np.empty(len(vocabulary))
    for g, i in vocabulary.items():
        idf[i] = np.log((1.0 + n) / (1.0 + df[g])) + 1.0
    return vocabulary, idf


def tfidf_vector(text: str, vocabulary: dict[str, int], idf: np.ndarray) -> np.ndarray:
    """Raw term counts times idf, L2-normalized; out-of-vocabulary grams contribute nothing."""
    vec = np.zeros(len(vocabulary))
    for g, count in Counter(ngrams(tokenize(text))).items():
        idx = vocabulary.get(g)
        if idx is not None:
            vec[idx] = count * idf[idx]
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


class _TfidfSource(BatchSource):
    """Densifies tf-idf rows per batch so the full matrix never materializes."""

    def __init__(self, texts: Sequence[str], targets: np.ndarray,
                 vocabulary: dict[str, int], idf: np.ndarray):
        self._rows = [self._sparse(t, vocabulary, idf) for t in texts]
        self._targets = targets
        self._dim = len(vocabulary)

    @staticmethod
    def _sparse(text: str, vocabulary: dict[str, int], idf: np.ndarray
                ) -> list[tuple[int, float]]:
        items = []
        for g, count in Counter(ngrams(tokenize(text))).items():
            idx = vocabulary.get(g)
            if idx is not None:
                items.append((idx, count * idf[idx]))
        norm = np.sqrt(sum(v * v for _, v in items))
        if norm > 0:
            items = [(i, v / norm) for i, v in items]
        return items

    def __len__(self) -> int:
        return len(self._rows)

    def batch(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.zeros((len(indices), self._dim))
        for r, i in enumerate(indices):
            for idx, v in self._rows[i]:
                x[r, idx] = v
        return x, self._targets[indices]


@dataclass
class TfidfModel:
    task: TaskSpec
    vocabulary: dict[str, int] | None = None
    idf: np.ndarray | None = None
    head: DenseNet | None = None
    thresholds: np.ndarray | None = None

    def scores(self, text: str) -> np.ndarray:
        if self.head is None or self.vocabulary is None:
            raise ModelNotTrained("tf-idf model has no trained head")
        return self.head.forward(tfidf_vector(text, self.vocabulary, self.idf))


# ---------------------------------------------------------------------------
# FastText-style classifier
# ---------------------------------------------------------------------------


class _HashedEmbeddings:
    """Hashed n-gram embedding table with stateless per-row initialization.

    Rows are materialized lazily: an untouched bucket's row is a pure
    function of (seed, bucket), so storing only trained rows reproduces the
    full table exactly.
    """

    def __init__(self, dim: int, seed: int, buckets: int = HASH_BUCKETS):
        self.dim = dim
        self.seed = seed
        self.buckets = buckets
        self.rows: dict[int, np.ndarray] = {}

    def init_row(self, bucket: int) -> np.ndarray:
        material = f"{self.seed}:{bucket}".encode()
        row_seed = int.from_bytes(hashlib.blake2b(material, digest_size=8).digest(), "little")
        rng = np.random.default_rng(row_seed)
        return rng.uniform(-1.0, 1.0, size=self.dim) / self.dim

    def row(self, bucket: int) -> np.ndarray:
        got = self.rows.get(bucket)
        if got is None:
            got = self.rows[bucket] = self.init_row(bucket)
        return got

    def pooled(self, buckets: Sequence[int]) -> np.ndarray:
        if not buckets:
            return np.zeros(self.dim)
        acc = np.zeros(self.dim)
        for b in buckets:
            acc += self.row(b)
        return acc / len(buckets)


@dataclass
class _FastStyleUnit:
    """One binary concept: embedding table plus a single linear+sigmoid output."""

    embeddings: _HashedEmbeddings
    head: DenseNet

    def score(self, buckets: Sequence[int]) -> float:
        return float(self.head.forward(self.embeddings.pooled(buckets))[0])


@dataclass
class FastStyleModel:
    task: TaskSpec
    dim: int = 32
    downsample_ratio: float = 1.0  # majority samples kept per minority sample
    units: list[_FastStyleUnit] = field(default_factory=list)
    thresholds: np.ndarray | None = None

    def scores(self, text: str) -> np.ndarray:
        if not self.units:
            raise ModelNotTrained("fast-style model has no trained units")
        buckets = [stable_bucket(g) for g in ngrams(tokenize(text))]
        return np.array([u.score(buckets) for u in self.units])


def downsample_majority(targets: np.ndarray, ratio: float,
                        rng: np.random.Generator) -> np.ndarray:
    """Indices keeping every minority sample and ratio*minority of the majority."""
    targets = np.asarray(targets).reshape(-1)
    pos = np.flatnonzero(targets > 0.5)
    neg = np.flatnonzero(targets <= 0.5)
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    keep = min(len(majority), max(1, int(round(ratio * len(minority)))))
    chosen = rng.choice(majority, size=keep, replace=False)
    return np.sort(np.concatenate([minority, chosen]))


def _train_faststyle_unit(
    texts: Sequence[str], targets: np.ndarray,
    dev_texts: Sequence[str], dev_targets: np.ndarray,
    dim: int, config: TrainConfig, unit_seed: int,
) -> _FastStyleUnit:
    """SGD over the pooled-embedding + linear head; embeddings get plain
    sparse updates, the head uses momentum."""
    embeddings = _HashedEmbeddings(dim, seed=unit_seed)
    head = DenseNet.create([dim, 1], [Activation.SIGMOID], seed=unit_seed)
    spec = LossSpec(LossKind.BINARY_CROSS_ENTROPY)
    rng = np.random.default_rng(unit_seed)

    docs = [[stable_bucket(g) for g in ngrams(tokenize(t))] for t in texts]
    dev_docs = [[stable_bucket(g) for g in ngrams(tokenize(t))] for t in dev_texts]
    velocity = [np.zeros_like(p) for p in head.parameters()]
    best = (-np.inf, None, None)
    stall = 0

    for _ in range(config.max_epochs):
        order = rng.permutation(len(docs))
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x = np.stack([embeddings.pooled(docs[i]) for i in idx])
            y = targets[idx].reshape(-1, 1)
            out, caches = head.forward_cached(x)
            _, d_out, fused = nncore.training_loss_and_grad(
                spec, out, y, head.layers[-1].activation)
            grads, d_x = head.backward(caches, d_out, last_is_preactivation=fused)
            for p, g, v in zip(head.parameters(), grads, velocity):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v
            for r, i in enumerate(idx):
                if docs[i]:
                    step = config.learning_rate * d_x[r] / len(docs[i])
                    for b in docs[i]:
                        embeddings.row(b)  # materialize
                        embeddings.rows[b] = embeddings.rows[b] - step

        dev_scores = np.array([float(head.forward(embeddings.pooled(d))[0])
                               for d in dev_docs])
        metric = _binary_f1(dev_scores, dev_targets)
        if metric > best[0]:
            best = (metric, {b: r.copy() for b, r in embeddings.rows.items()},
                    [p.copy() for p in head.parameters()])
            stall = 0
        else:
            stall += 1
            if stall > config.early_stop_patience:
                break

    if best[1] is not None:
        embeddings.rows = best[1]
        for p, saved in zip(head.parameters(), best[2]):
            p[...] = saved
    return _FastStyleUnit(embeddings, head)


def _binary_f1(scores: np.ndarray, targets: np.ndarray, threshold: float = 0.5) -> float:
    pred = scores >= threshold
    truth = np.asarray(targets).reshape(-1) > 0.5
    counts = ConfusionCounts(tp=int(np.sum(pred & truth)), fp=int(np.sum(pred & ~truth)),
                             fn=int(np.sum(~pred & truth)), tn=int(np.sum(~pred & ~truth)))
    return binary_metrics(counts).f1


# ---------------------------------------------------------------------------
# Contextual bandit
# ---------------------------------------------------------------------------


@dataclass
class BanditModel:
    """Cost-sensitive one-against-all: each arm regresses its 0/1 misclassification
    cost on hashed token features; pulls are epsilon-greedy, updates
    inverse-propensity weighted."""

    task: TaskSpec
    epsilon: float = 0.05
    arm_weights: np.ndarray | None = None  # (n_arms, HASH_BUCKETS)
    thresholds: np.ndarray | None = None

    @property
    def n_arms(self) -> int:
        return 2 if self.task.kind is TaskKind.QUESTIONS_ONLY else self.task.n_classes

    def _features(self, text: str) -> list[tuple[int, float]]:
        buckets = Counter(stable_bucket(g) for g in ngrams(tokenize(text)))
        total = sum(buckets.values())
        return [(b, c / total) for b, c in sorted(buckets.items())] if total else []

    def _costs(self, features: list[tuple[int, float]]) -> np.ndarray:
        if self.arm_weights is None:
            raise ModelNotTrained("bandit model has no arm weights")
        costs = np.zeros(self.n_arms)
        for b, v in features:
            costs += self.arm_weights[:, b] * v
        return costs

    def scores(self, text: str) -> np.ndarray:
        """QuestionsOnly: sigmoid of the cost margin, so 0.5 equals argmin cost.
        Full task: per-class 1 - clipped predicted cost."""
        costs = self._costs(self._features(text))
        if self.task.kind is TaskKind.QUESTIONS_ONLY:
            margin = np.clip(costs[0] - costs[1], -500.0, 500.0)
            return np.array([1.0 / (1.0 + np.exp(-margin))])
        return 1.0 - np.clip(costs, 0.0, 1.0)


def train_bandit(
    texts: Sequence[str], targets: np.ndarray,
    dev_texts: Sequence[str], dev_targets: np.ndarray,
    task: TaskSpec, config: TrainConfig, epsilon: float = 0.05,
    learning_rate: float = 0.5,
) -> BanditModel:
    """Epsilon-greedy cost-sensitive training: pull an arm, observe cost 0 when
    the arm matches the sample's labels (1 otherwise), and update that arm's
    regressor with an inverse-propensity-weighted squared-loss step."""
    model = BanditModel(task, epsilon)
    model.arm_weights = np.zeros((model.n_arms, HASH_BUCKETS))
    rng = np.random.default_rng(config.seed)
    features = [model._features(t) for t in texts]
    targets = np.atleast_2d(targets)
    n_arms = model.n_arms

    def arm_cost(sample_idx: int, arm: int) -> float:
        if task.kind is TaskKind.QUESTIONS_ONLY:
            positive = targets[sample_idx, 0] > 0.5
            return 0.0 if (arm == 1) == positive else 1.0
        return 0.0 if targets[sample_idx, arm] > 0.5 else 1.0

    best = (-np.inf, None)
    stall = 0
    for _ in range(config.max_epochs):
        order = rng.permutation(len(texts))
        for i in order:
            feats = features[i]
            if not feats:
                continue
            costs = model._costs(feats)
            greedy = int(np.argmin(costs))
            explore = rng.random() < epsilon
            arm = int(rng.integers(n_arms)) if explore else greedy
            propensity = (epsilon / n_arms + (1.0 - epsilon) * (arm == greedy)
                          if epsilon > 0 else float(arm == greedy))
            if propensity <= 0:
                continue
            err = (costs[arm] - arm_cost(i, arm)) / propensity
            for b, v in feats:
                model.arm_weights[arm, b] -= learning_rate * err * v

        dev_f1 = _dev_macro_f1(model, dev_texts, dev_targets)
        if dev_f1 > best[0]:
            best = (dev_f1, model.arm_weights.copy())
            stall = 0
        else:
            stall += 1
            if stall > config.early_stop_patience:
                break
    if best[1] is not None:
        model.arm_weights = best[1]
    return model


def _dev_macro_f1(model, dev_texts: Sequence[str], dev_targets: np.ndarray,
                  thresholds: np.ndarray | None = None) -> float:
    if len(dev_texts) == 0:
        return 0.0
    scores = np.stack([model.scores(t) for t in dev_texts])
    dev_targets = np.atleast_2d(dev_targets)
    th = thresholds if thresholds is not None else np.full(scores.shape[1], 0.5)
    f1s = [_binary_f1(scores[:, c] - th[c] + 0.5, dev_targets[:, c])
           for c in range(scores.shape[1])]
    return float(np.mean(f1s))


# ---------------------------------------------------------------------------
# Unified training and prediction
# ---------------------------------------------------------------------------

TextModel = TfidfModel | FastStyleModel | BanditModel


def train_text_model(
    kind: ModelKind,
    task: TaskSpec,
    splits: dict[str, Sequence[LabeledTextSample]],
    config: TrainConfig,
    loss_variant: str = "weighted",
    head_hidden: int = 64,
    faststyle_dim: int = 32,
    downsample_ratio: float = 1.0,
    epsilon: float = 0.05,
) -> TextModel:
    """Train one detector on labeled splits; dev F1 drives model selection.

    loss_variant picks plain or inverse-frequency-weighted loss for the
    tf-idf head; the fast-style model balances by downsampling instead, and
    the bandit is cost-sensitive by construction, so both ignore it.
    """
    train_samples, dev_samples = splits["train"], splits["dev"]
    if not train_samples or not dev_samples:
        raise EmptyCorpus("train and dev splits must both be non-empty")
    texts = [s.transcript.text for s in train_samples]
    dev_texts = [s.transcript.text for s in dev_samples]
    y = task.target_matrix(train_samples)
    y_dev = task.target_matrix(dev_samples)

    if loss_variant not in ("plain", "weighted"):
        raise ValueError(f"unknown loss variant {loss_variant!r}")

    if kind is ModelKind.TFIDF:
        vocabulary, idf = fit_tfidf(texts)
        head = DenseNet.create([len(vocabulary), head_hidden, task.n_classes],
                               [Activation.LEAKY_RELU, Activation.SIGMOID],
                               seed=config.seed)
        weights = balanced_pos_weights(y) if loss_variant == "weighted" else None
        spec = LossSpec(LossKind.BINARY_CROSS_ENTROPY, weights)
        model = TfidfModel(task, vocabulary, idf, head)

        def dev_f1(net: DenseNet) -> float:
            return _dev_macro_f1(model, dev_texts, y_dev)

        nncore.train(head, _TfidfSource(texts, y, vocabulary, idf),
                     _TfidfSource(dev_texts, y_dev, vocabulary, idf),
                     spec, config, dev_metric=dev_f1)
        return model

    if kind is ModelKind.FASTSTYLE:
        rng = np.random.default_rng(config.seed)
        units = []
        for c in range(task.n_classes):
            keep = downsample_majority(y[:, c], downsample_ratio, rng)
            units.append(_train_faststyle_unit(
                [texts[i] for i in keep], y[keep][:, c],
                dev_texts, y_dev[:, c],
                faststyle_dim, config, unit_seed=config.seed * 1000 + c))
        return FastStyleModel(task, faststyle_dim, downsample_ratio, units)

    return train_bandit(texts, y, dev_texts, y_dev, task, config, epsilon=epsilon)


def predict(model: TextModel, sample: LabeledTextSample | str) -> np.ndarray:
    """Per-class probabilities: one for the question task, six for the full task."""
    text = sample if isinstance(sample, str) else sample.transcript.text
    return model.scores(text)


def classify(model: TextModel, sample: LabeledTextSample | str) -> np.ndarray:
    scores = predict(model, sample)
    th = model.thresholds if model.thresholds is not None else np.full(len(scores), 0.5)
    return (scores >= th).astype(int)


def tune_thresholds(model: TextModel, dev_samples: Sequence[LabeledTextSample],
                    grid: Iterable[float] = np.arange(0.05, 1.0, 0.05)) -> np.ndarray:
    """Pick per-class thresholds maximizing dev F1; stores them on the model."""
    y = model.task.target_matrix(dev_samples)
    scores = np.stack([predict(model, s) for s in dev_samples])
    thresholds = np.empty(scores.shape[1])
    for c in range(scores.shape[1]):
        best = max(grid, key=lambda t: _binary_f1(scores[:, c], y[:, c], t))
        thresholds[c] = best
    model.thresholds = thresholds
    return thresholds


# ---------------------------------------------------------------------------
# Model files: nncore checkpoint container + vocabulary section
# ---------------------------------------------------------------------------


def save_text_model(model: TextModel, path: Path, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta["task"] = model.task.kind.value
    thresholds = None if model.thresholds is None else np.asarray(model.thresholds)
    extra: dict[str, np.ndarray] = {}
    if thresholds is not None:
        extra["thresholds"] = thresholds

    if isinstance(model, TfidfModel):
        if model.head is None:
            raise ModelNotTrained("cannot save an untrained model")
        meta["model"] = ModelKind.TFIDF.value
        extra["idf"] = model.idf
        nncore.save_checkpoint(path, model.head, meta=meta, extra_arrays=extra,
                               vocabulary=model.vocabulary)
    elif isinstance(model, FastStyleModel):
        if not model.units:
            raise ModelNotTrained("cannot save an untrained model")
        meta["model"] = ModelKind.FASTSTYLE.value
        meta["dim"] = model.dim
        meta["downsample_ratio"] = model.downsample_ratio
        meta["unit_seeds"] = [u.embeddings.seed for u in model.units]
        for i, unit in enumerate(model.units):
            buckets = sorted(unit.embeddings.rows)
            extra[f"unit{i}.buckets"] = np.array(buckets, dtype=float)
            extra[f"unit{i}.rows"] = (np.stack([unit.embeddings.rows[b] for b in buckets])
                                      if buckets else np.zeros((0, model.dim)))
            if i > 0:
                extra[f"unit{i}.head.weights"] = unit.head.layers[0].weights
                extra[f"unit{i}.head.bias"] = unit.head.layers[0].bias
        nncore.save_checkpoint(path, model.units[0].head, meta=meta, extra_arrays=extra)
    else:
        if model.arm_weights is None:
            raise ModelNotTrained("cannot save an untrained model")
        meta["model"] = ModelKind.BANDIT.value
        meta["epsilon"] = model.epsilon
        extra["arm_weights"] = model.arm_weights
        placeholder = DenseNet.create([1, 1], [Activation.IDENTITY], seed=0)
        nncore.save_checkpoint(path, placeholder, meta=meta, extra_arrays=extra)


def load_text_model(path: Path) -> TextModel:
    ckpt = nncore.load_checkpoint(path)
    meta = ckpt.meta
    task = TaskSpec(TaskKind(meta["task"]))
    thresholds = ckpt.extra_arrays.get("thresholds")
    kind = ModelKind(meta["model"])

    if kind is ModelKind.TFIDF:
        model: TextModel = TfidfModel(task, ckpt.vocabulary, ckpt.extra_arrays["idf"],
                                      ckpt.net, thresholds)
    elif kind is ModelKind.FASTSTYLE:
        dim = int(meta["dim"])
        units = []
        for i, seed in enumerate(meta["unit_seeds"]):
            emb = _HashedEmbeddings(dim, seed=int(seed))
            buckets = ckpt.extra_arrays[f"unit{i}.buckets"].astype(int)
            rows = ckpt.extra_arrays[f"unit{i}.rows"]
            emb.rows = {int(b): rows[j].copy() for j, b in enumerate(buckets)}
            if i == 0:
                head = ckpt.net
            else:
                head = DenseNet([nncore.Layer(ckpt.extra_arrays[f"unit{i}.head.weights"],
                                              ckpt.extra_arrays[f"unit{i}.head.bias"],
                                              Activation.SIGMOID)], seed=int(seed))
            units.append(_FastStyleUnit(emb, head))
        model = FastStyleModel(task, dim, float(meta["downsample_ratio"]), units,
                               thresholds)
    else:
        model = BanditModel(task, float(meta["epsilon"]),
                            ckpt.extra_arrays["arm_weights"], thresholds)
    return model
