"""Metric computation, learning-curve subsets, and duration/score correlation.

Undefined metrics (zero denominators) are flagged, never silently zeroed;
aggregates exclude flagged classes and say so. Balanced accuracy is the mean
of the defined per-class recalls.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .core import Observation
from .labeling import LabeledTextSample

_SENTENCE_PARTS = re.compile(r"([^.?!]*[.?!]+|[^.?!]+$)")


class FractionTooSmall(Exception):
    """A learning-curve subset contains no positive sample."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class BinaryMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    recall_defined: bool = True
    f1_defined: bool = True


def binary_metrics(c: ConfusionCounts) -> BinaryMetrics:
    """Accuracy, precision, recall and F1; zero-denominator metrics come back
    as 0.0 with their defined-flag cleared."""
    accuracy = (c.tp + c.tn) / c.total if c.total else 0.0
    p_def, r_def = c.tp + c.fp > 0, c.tp + c.fn > 0
    precision = c.tp / (c.tp + c.fp) if p_def else 0.0
    recall = c.tp / (c.tp + c.fn) if r_def else 0.0
    f1_def = p_def and r_def and (precision + recall) > 0
    f1 = 2 * precision * recall / (precision + recall) if f1_def else 0.0
    return BinaryMetrics(accuracy, precision, recall, f1, p_def, r_def, f1_def)


@dataclass(frozen=True)
class BalancedAccuracy:
    value: float
    excluded_classes: tuple[int, ...] = ()  # indices with no positives


def balanced_accuracy(per_class: Sequence[ConfusionCounts]) -> BalancedAccuracy:
    """Mean of the defined per-class recalls; positive-free classes are excluded
    and flagged."""
    recalls, excluded = [], []
    for i, c in enumerate(per_class):
        if c.tp + c.fn > 0:
            recalls.append(c.tp / (c.tp + c.fn))
        else:
            excluded.append(i)
    if not recalls:
        raise ValueError("no class has positive samples")
    return BalancedAccuracy(float(np.mean(recalls)), tuple(excluded))


def confusion_from_predictions(predictions: np.ndarray, targets: np.ndarray
                               ) -> list[ConfusionCounts]:
    """Per-class confusion counts from binary prediction/target matrices."""
    predictions = np.atleast_2d(np.asarray(predictions)).astype(bool)
    targets = np.atleast_2d(np.asarray(targets)).astype(bool)
    out = []
    for c in range(targets.shape[1]):
        p, t = predictions[:, c], targets[:, c]
        out.append(ConfusionCounts(tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)),
                                   fn=int(np.sum(~p & t)), tn=int(np.sum(~p & ~t))))
    return out


@dataclass
class EvalReport:
    """Per-class metrics plus run metadata for one trained model on one split."""

    class_names: tuple[str, ...]
    per_class: dict[str, BinaryMetrics]
    accuracy: float  # micro accuracy across all binary decisions
    balanced: BalancedAccuracy
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "classes": list(self.class_names),
            "per_class": {
                name: {
                    "precision": m.precision, "recall": m.recall, "f1": m.f1,
                    "accuracy": m.accuracy,
                    "precision_defined": m.precision_defined,
                    "recall_defined": m.recall_defined,
                    "f1_defined": m.f1_defined,
                } for name, m in self.per_class.items()
            },
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced.value,
            "balanced_excluded_classes": list(self.balanced.excluded_classes),
            "meta": self.meta,
        }


def evaluate_predictions(predictions: np.ndarray, targets: np.ndarray,
                         class_names: Sequence[str], meta: dict | None = None
                         ) -> EvalReport:
    counts = confusion_from_predictions(predictions, targets)
    per_class = {name: binary_metrics(c) for name, c in zip(class_names, counts)}
    total = sum(c.total for c in counts)
    correct = sum(c.tp + c.tn for c in counts)
    return EvalReport(tuple(class_names), per_class,
                      correct / total if total else 0.0,
                      balanced_accuracy(counts), meta or {})


def learning_curve(
    trainer: Callable[[list], float],
    samples: Sequence,
    group_keys: Sequence[Hashable],
    fractions: Sequence[float] = tuple(np.round(np.arange(0.1, 1.01, 0.1), 2)),
    seed: int = 0,
    is_positive: Callable | None = None,
) -> list[tuple[float, float]]:
    """One F1 per training fraction, over nested group-respecting subsets.

    Groups are shuffled once by seed; the subset for fraction f is the
    shortest group prefix reaching f of all samples, so every smaller
    fraction's samples are contained in every larger one's.
    """
    if any(not (0.0 < f <= 1.0) for f in fractions):
        raise ValueError("fractions must lie in (0, 1]")
    by_group: dict[str, list] = {}
    for sample, key in zip(samples, group_keys):
        by_group.setdefault(str(key), []).append(sample)
    order = sorted(by_group)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)

    total = len(samples)
    results = []
    for f in sorted(fractions):
        subset: list = []
        for key in order:
            if len(subset) >= f * total:
                break
            subset.extend(by_group[key])
        if not subset:
            subset.extend(by_group[order[0]])
        if is_positive is not None and not any(is_positive(s) for s in subset):
            raise FractionTooSmall(f"fraction {f} yields no positive sample")
        results.append((f, trainer(subset)))
    return results


def duration_score_correlation(pairs: Sequence[tuple[float, float]]
                               ) -> tuple[float, float, int]:
    """Pearson r and Spearman rho between per-feature cumulative duration and
    best score, plus the sample size."""
    if len(pairs) < 3:
        raise ValueError("need at least 3 features to correlate")
    durations = [d for d, _ in pairs]
    scores = [s for _, s in pairs]
    pearson = float(scipy_stats.pearsonr(durations, scores).statistic)
    spearman = float(scipy_stats.spearmanr(durations, scores).statistic)
    return pearson, spearman, len(pairs)


def cumulative_feature_durations(annotations: Sequence[Observation]) -> dict[str, float]:
    """Sum of event durations per feature code over the whole corpus."""
    totals: dict[str, float] = {}
    for obs in annotations:
        for ev in obs.events:
            totals[ev.feature.code] = totals.get(ev.feature.code, 0.0) + ev.span.duration
    return totals


def export_feature_timeline(annotations: Sequence[Observation], sink) -> int:
    """JSON-lines of labeled intervals, one per event, for downstream plotting.

    Returns the number of lines written. Point events carry equal start/end.
    """
    import json

    rows = sorted(
        (obs.lecture_id, ev.feature.code, ev.span.start_s, ev.span.end_s,
         obs.observer_id)
        for obs in annotations for ev in obs.events)
    for lecture_id, code, start_s, end_s, observer_id in rows:
        sink.write(json.dumps({
            "lecture_id": lecture_id, "feature": code, "start_s": start_s,
            "end_s": end_s, "observer_id": observer_id}, sort_keys=True) + "\n")
    return len(rows)


@dataclass(frozen=True)
class QuestionMarkAgreement:
    n_question_mark_sentences: int
    n_labeled_questions: int

    @property
    def rate(self) -> float | None:
        if self.n_question_mark_sentences == 0:
            return None
        return self.n_labeled_questions / self.n_question_mark_sentences


def questionmark_agreement(samples: Sequence[LabeledTextSample]) -> QuestionMarkAgreement:
    """How many '?'-bearing sentences sit in samples actually labeled as questions.

    Diagnostic only; the toolkit reports the agreement rate but never
    relabels.
    """
    total, labeled = 0, 0
    for s in samples:
        k = sum(1 for part in _SENTENCE_PARTS.findall(s.transcript.text) if "?" in part)
        total += k
        if s.labels & {"AQ", "GQ"}:
            labeled += k
    return QuestionMarkAgreement(total, labeled)
