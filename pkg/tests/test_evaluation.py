import numpy as np
import pytest

from lectkit.core import TimeInterval, TranscriptEvent
from lectkit.labeling import LabeledTextSample
from lectkit.evaluation import (
    BalancedAccuracy,
    ConfusionCounts,
    FractionTooSmall,
    balanced_accuracy,
    binary_metrics,
    confusion_from_predictions,
    cumulative_feature_durations,
    duration_score_correlation,
    evaluate_predictions,
    learning_curve,
    questionmark_agreement,
)


class TestBinaryMetrics:
    # published (P, R) -> F1 fixtures for the question task
    @pytest.mark.parametrize("p,r,f1", [
        (0.332, 0.453, 0.383),
        (0.481, 0.387, 0.429),
        (0.442, 0.321, 0.373),
        (0.116, 1.00, 0.207),
        (0.177, 0.459, 0.255),
        (0.461, 0.100, 0.164),
    ])
    def test_f1_reproduces_published_rows(self, p, r, f1):
        assert 2 * p * r / (p + r) == pytest.approx(f1, abs=0.002)

    def test_counts_to_metrics(self):
        m = binary_metrics(ConfusionCounts(tp=6, fp=2, fn=4, tn=8))
        assert m.accuracy == pytest.approx(14 / 20)
        assert m.precision == pytest.approx(6 / 8)
        assert m.recall == pytest.approx(6 / 10)
        assert m.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)

    def test_degenerate_counts_flagged(self):
        m = binary_metrics(ConfusionCounts(tp=0, fp=0, fn=0, tn=10))
        assert m.accuracy == 1.0
        assert not m.precision_defined and not m.recall_defined
        assert m.precision == 0.0 and m.recall == 0.0

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionCounts(tp=-1, fp=0, fn=0, tn=0)

    def test_f1_bounds_and_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            tp, fp, fn, tn = rng.integers(1, 50, size=4)
            m = binary_metrics(ConfusionCounts(int(tp), int(fp), int(fn), int(tn)))
            assert m.f1 <= (m.precision + m.recall) / 2 + 1e-12
            assert m.f1 <= max(m.precision, m.recall) + 1e-12
            # swapping fp/fn swaps precision and recall; F1 is unchanged
            swapped = binary_metrics(ConfusionCounts(int(tp), int(fn), int(fp), int(tn)))
            assert swapped.precision == pytest.approx(m.recall)
            assert swapped.f1 == pytest.approx(m.f1)

    def test_f1_equals_pr_when_equal(self):
        m = binary_metrics(ConfusionCounts(tp=3, fp=1, fn=1, tn=5))
        assert m.precision == m.recall == m.f1


class TestBalancedAccuracy:
    def test_mean_of_recalls(self):
        counts = [ConfusionCounts(10, 0, 0, 0),  # recall 1.0
                  ConfusionCounts(5, 0, 5, 0),   # recall 0.5
                  ConfusionCounts(0, 0, 10, 0)]  # recall 0.0
        assert balanced_accuracy(counts).value == pytest.approx(0.5)

    def test_equal_recalls(self):
        counts = [ConfusionCounts(3, 1, 1, 2)] * 4  # recall .75 each
        assert balanced_accuracy(counts).value == pytest.approx(0.75)

    def test_binary_hand_computation(self):
        positive = ConfusionCounts(tp=8, fp=5, fn=2, tn=5)
        negative = ConfusionCounts(tp=5, fp=2, fn=5, tn=8)  # mirrored
        assert balanced_accuracy([positive, negative]).value == pytest.approx(0.65)

    def test_positive_free_classes_excluded_and_flagged(self):
        counts = [ConfusionCounts(5, 0, 5, 0), ConfusionCounts(0, 3, 0, 7)]
        result = balanced_accuracy(counts)
        assert result.value == pytest.approx(0.5)
        assert result.excluded_classes == (1,)

    def test_random_predictor_converges_to_half(self):
        rng = np.random.default_rng(7)
        n = 10_000
        targets = (rng.random((n, 3)) < [0.1, 0.4, 0.7]).astype(int)
        preds = (rng.random((n, 3)) < 0.5).astype(int)
        counts = confusion_from_predictions(preds, targets)
        assert balanced_accuracy(counts).value == pytest.approx(0.5, abs=0.03)


def test_evaluate_predictions_report():
    preds = np.array([[1, 0], [1, 1], [0, 0], [1, 0]])
    targets = np.array([[1, 0], [0, 1], [0, 0], [1, 1]])
    report = evaluate_predictions(preds, targets, ["A", "B"], meta={"model": "m"})
    assert report.per_class["A"].recall == pytest.approx(1.0)
    assert report.per_class["B"].recall == pytest.approx(0.5)
    assert report.accuracy == pytest.approx(6 / 8)
    data = report.to_json()
    assert data["meta"]["model"] == "m"
    assert data["balanced_accuracy"] == pytest.approx(report.balanced.value)


class TestLearningCurve:
    def _trainer(self, log):
        def trainer(subset):
            log.append(len(subset))
            return len(subset) / 100.0
        return trainer

    def test_full_fraction_uses_everything(self):
        log = []
        samples = list(range(60))
        keys = [i % 6 for i in samples]
        points = learning_curve(self._trainer(log), samples, keys, fractions=[1.0],
                                seed=0)
        assert log == [60]
        assert points == [(1.0, 0.6)]

    def test_subsets_nested_and_nondecreasing(self):
        log = []
        samples = list(range(100))
        keys = [i % 10 for i in samples]
        learning_curve(self._trainer(log), samples, keys,
                       fractions=[0.1, 0.3, 0.5, 1.0], seed=3)
        assert log == sorted(log)

    def test_nesting_is_prefix_closed(self):
        collected = []

        def trainer(subset):
            collected.append(set(subset))
            return 0.0

        samples = list(range(40))
        keys = [i % 8 for i in samples]
        learning_curve(trainer, samples, keys, fractions=[0.2, 0.6, 1.0], seed=1)
        assert collected[0] <= collected[1] <= collected[2]

    def test_no_positive_subset_raises(self):
        samples = ["neg"] * 50 + ["pos"]
        keys = list(range(51))
        with pytest.raises(FractionTooSmall):
            learning_curve(lambda s: 0.0, samples, keys, fractions=[0.02],
                           seed=0, is_positive=lambda s: s == "pos")

    def test_invalid_fraction(self):
        with pytest.raises(ValueError):
            learning_curve(lambda s: 0.0, [1, 2, 3], [1, 2, 3], fractions=[0.0])


class TestCorrelation:
    def test_perfectly_linear(self):
        pairs = [(1.0, 0.1), (2.0, 0.2), (3.0, 0.3), (4.0, 0.4)]
        pearson, spearman, n = duration_score_correlation(pairs)
        assert pearson == pytest.approx(1.0)
        assert spearman == pytest.approx(1.0)
        assert n == 4

    def test_monotone_gives_spearman_one(self):
        pairs = [(1.0, 0.1), (2.0, 0.5), (10.0, 0.51), (100.0, 0.9)]
        _, spearman, _ = duration_score_correlation(pairs)
        assert spearman == pytest.approx(1.0)

    def test_rank_fixture(self):
        # ranks x: 1,2,3; y: 1,3,2 -> rho = 1 - 6*2/(3*8) = 0.5
        _, spearman, _ = duration_score_correlation([(1, 0.1), (2, 0.3), (3, 0.2)])
        assert spearman == pytest.approx(0.5)

    def test_needs_three_features(self):
        with pytest.raises(ValueError):
            duration_score_correlation([(1, 0.1), (2, 0.2)])


def _sample(text, labels=()):
    tr = TranscriptEvent("l1", TimeInterval(0, 5), text)
    return LabeledTextSample(tr, frozenset(labels), frozenset())


class TestQuestionMarkAgreement:
    def test_full_agreement(self):
        samples = [_sample("why? who?", labels=("AQ",)), _sample("plain. text.")]
        result = questionmark_agreement(samples)
        assert result.n_question_mark_sentences == 2
        assert result.n_labeled_questions == 2
        assert result.rate == 1.0

    def test_no_question_marks(self):
        result = questionmark_agreement([_sample("one. two.")])
        assert result.n_question_mark_sentences == 0
        assert result.rate is None

    def test_partial_agreement(self):
        samples = [_sample("why?", labels=("GQ",)),
                   _sample("rhetorical much?"),
                   _sample("also unlabeled?"),
                   _sample("and this one?"),
                   _sample("last one?", labels=("AQ",))]
        result = questionmark_agreement(samples)
        assert result.n_question_mark_sentences == 5
        assert result.n_labeled_questions == 2
        assert result.rate == pytest.approx(0.4)

    def test_planted_noise_rate_measured(self):
        from lectkit.ingestion import SynthConfig, generate_synthetic
        from lectkit.labeling import label_transcripts
        # agreement = p/(p + (1-p)*q) with p=0.15, q tuned for 0.40
        q = 0.15 * (1 / 0.40 - 1) / 0.85
        corpus = generate_synthetic(SynthConfig(
            seed=123, n_lectures=40, events_per_lecture=250,
            feature_prevalences={"AQ": 0.15}, question_noise_rate=q))
        samples = label_transcripts(corpus.transcripts, corpus.observations)
        result = questionmark_agreement(samples)
        assert result.rate == pytest.approx(0.40, abs=0.02)


def test_cumulative_feature_durations():
    from lectkit.core import AnnotationEvent, EventKind, Observation, feature
    events = (
        AnnotationEvent("l1", "o1", feature("AQ"), EventKind.STATE, TimeInterval(0, 5)),
        AnnotationEvent("l1", "o1", feature("AQ"), EventKind.STATE, TimeInterval(10, 12)),
        AnnotationEvent("l1", "o1", feature("EC"), EventKind.POINT, TimeInterval(3, 3)),
    )
    totals = cumulative_feature_durations([Observation("l1", "o1", events)])
    assert totals["AQ"] == pytest.approx(7.0)
    assert totals["EC"] == pytest.approx(0.0)
