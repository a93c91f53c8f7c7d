import io

import pytest

from lectkit.core import EventKind
from lectkit.ingestion import (
    AnnotationParseError,
    Marker,
    RawAnnotationRow,
    SynthConfig,
    TranscriptParseError,
    count_sentences,
    generate_synthetic,
    parse_annotations,
    parse_observations,
    parse_transcript,
    read_annotation_csv,
    read_boris_export,
    serialize_annotations,
    serialize_observations,
    serialize_transcript,
)


def _row(feature, marker, t, observer="o1", lecture="l1"):
    return RawAnnotationRow(observer, lecture, feature, marker, t)


class TestParseAnnotations:
    def test_start_stop_pairing(self):
        obs = parse_annotations([_row("AQ", Marker.START, 12.3),
                                 _row("AQ", Marker.STOP, 20.1)])
        assert len(obs) == 1
        (event,) = obs[0].events
        assert event.kind is EventKind.STATE
        assert (event.span.start_s, event.span.end_s) == (12.3, 20.1)

    def test_point_rows(self):
        obs = parse_annotations([_row("EC", Marker.POINT, 33.0)])
        (event,) = obs[0].events
        assert event.kind is EventKind.POINT
        assert event.span.start_s == event.span.end_s == 33.0

    def test_unmatched_stop(self):
        with pytest.raises(AnnotationParseError) as err:
            parse_annotations([_row("AQ", Marker.STOP, 5.0)])
        assert err.value.issues[0].kind == "UnmatchedStop"
        assert err.value.issues[0].row == 0

    def test_unclosed_start(self):
        with pytest.raises(AnnotationParseError) as err:
            parse_annotations([_row("AQ", Marker.START, 5.0)])
        assert err.value.issues[0].kind == "UnclosedStart"

    def test_zero_duration_pair_is_negative_duration(self):
        with pytest.raises(AnnotationParseError) as err:
            parse_annotations([_row("AQ", Marker.START, 5.0),
                               _row("AQ", Marker.STOP, 5.0)])
        assert err.value.issues[0].kind == "NegativeDuration"

    def test_unknown_feature(self):
        with pytest.raises(AnnotationParseError) as err:
            parse_annotations([_row("ZZ", Marker.POINT, 1.0)])
        assert err.value.issues[0].kind == "UnknownFeature"

    def test_counts_preserved_without_overlap(self):
        rows = [_row("AQ", Marker.START, 1.0), _row("AQ", Marker.STOP, 2.0),
                _row("AQ", Marker.START, 5.0), _row("AQ", Marker.STOP, 7.0),
                _row("EC", Marker.POINT, 3.0), _row("EC", Marker.POINT, 4.0)]
        obs = parse_annotations(rows)
        states = [e for e in obs[0].events if e.kind is EventKind.STATE]
        points = [e for e in obs[0].events if e.kind is EventKind.POINT]
        assert len(states) == 2  # one per START consumed
        assert len(points) == 2  # one per POINT row

    def test_overlapping_states_merge_to_union(self):
        rows = [_row("AQ", Marker.START, 1.0), _row("AQ", Marker.START, 3.0),
                _row("AQ", Marker.STOP, 5.0), _row("AQ", Marker.STOP, 9.0)]
        obs = parse_annotations(rows)
        (event,) = obs[0].events
        assert (event.span.start_s, event.span.end_s) == (1.0, 9.0)

    def test_touching_states_stay_separate(self):
        rows = [_row("AQ", Marker.START, 1.0), _row("AQ", Marker.STOP, 3.0),
                _row("AQ", Marker.START, 3.0), _row("AQ", Marker.STOP, 5.0)]
        obs = parse_annotations(rows)
        assert len(obs[0].events) == 2

    def test_groups_by_lecture_and_observer(self):
        rows = [_row("AQ", Marker.POINT, 1.0, observer="a"),
                _row("AQ", Marker.POINT, 1.0, observer="b"),
                _row("AQ", Marker.POINT, 1.0, observer="a", lecture="l2")]
        obs = parse_annotations(rows)
        assert [(o.lecture_id, o.observer_id) for o in obs] == [
            ("l1", "a"), ("l1", "b"), ("l2", "a")]


def test_csv_round_trip():
    rows = [_row("AQ", Marker.START, 1.5), _row("AQ", Marker.STOP, 3.25),
            _row("EC", Marker.POINT, 2.0),
            _row("GQ", Marker.START, 10.0, observer="o2"),
            _row("GQ", Marker.STOP, 12.0, observer="o2")]
    observations = parse_annotations(rows)
    sink = io.StringIO()
    serialize_annotations(observations, sink)
    reparsed = parse_annotations(read_annotation_csv(io.StringIO(sink.getvalue())))
    assert reparsed == observations


def test_observations_jsonl_round_trip():
    rows = [_row("AQ", Marker.START, 1.5), _row("AQ", Marker.STOP, 3.25),
            _row("EC", Marker.POINT, 2.0)]
    observations = parse_annotations(rows)
    sink = io.StringIO()
    serialize_observations(observations, sink)
    assert parse_observations(io.StringIO(sink.getvalue())) == observations


def test_boris_adapter():
    csv_text = (
        "Observation id,Subject,Behavior,Behavior type,Start (s),Stop (s)\n"
        "lec7,assist1,Asking questions,STATE,4.0,9.0\n"
        "lec7,assist1,Eye contact,POINT,6.5,\n"
    )
    obs = parse_annotations(read_boris_export(io.StringIO(csv_text)))
    assert len(obs) == 1
    kinds = sorted((e.feature.code, e.kind.value) for e in obs[0].events)
    assert kinds == [("AQ", "state"), ("EC", "point")]


class TestParseTranscript:
    def test_sentence_count(self):
        line = ('{"lecture_id": "l1", "start_s": 3.0, "end_s": 9.5, '
                '"text": "Who is this guy? Who is this guy printed on this bill?"}\n')
        (event,) = parse_transcript(io.StringIO(line))
        assert event.sentence_count == 2

    def test_single_sentence(self):
        line = '{"lecture_id": "l1", "start_s": 0, "end_s": 4, "text": "so cool."}\n'
        (event,) = parse_transcript(io.StringIO(line))
        assert event.sentence_count == 1

    def test_end_before_start_rejected(self):
        line = '{"lecture_id": "l1", "start_s": 4, "end_s": 2, "text": "x."}\n'
        with pytest.raises(TranscriptParseError) as err:
            parse_transcript(io.StringIO(line))
        assert err.value.kind == "MalformedRecord"

    def test_missing_field_rejected(self):
        with pytest.raises(TranscriptParseError):
            parse_transcript(io.StringIO('{"lecture_id": "l1", "start_s": 0}\n'))

    def test_empty_text_rejected(self):
        line = '{"lecture_id": "l1", "start_s": 0, "end_s": 4, "text": "  "}\n'
        with pytest.raises(TranscriptParseError):
            parse_transcript(io.StringIO(line))

    def test_non_monotonic_warns_but_parses(self, caplog):
        lines = ('{"lecture_id": "l1", "start_s": 10, "end_s": 12, "text": "a."}\n'
                 '{"lecture_id": "l1", "start_s": 5, "end_s": 7, "text": "b."}\n')
        with caplog.at_level("WARNING"):
            events = parse_transcript(io.StringIO(lines))
        assert len(events) == 2
        assert any("non-monotonic" in r.message for r in caplog.records)

    def test_round_trip(self):
        lines = ('{"lecture_id": "l1", "start_s": 1.0, "end_s": 4.5, "text": "a? b."}\n')
        events = parse_transcript(io.StringIO(lines))
        sink = io.StringIO()
        serialize_transcript(events, sink)
        assert parse_transcript(io.StringIO(sink.getvalue())) == events


def test_count_sentences():
    assert count_sentences("one. two? three!") == 3
    assert count_sentences("no terminal punctuation") == 1
    assert count_sentences("ellipsis... still one") == 2  # split on the run


class TestSynthetic:
    def test_determinism(self):
        a = generate_synthetic(SynthConfig(seed=9, n_lectures=3, events_per_lecture=40))
        b = generate_synthetic(SynthConfig(seed=9, n_lectures=3, events_per_lecture=40))
        assert a == b

    def test_different_seeds_differ(self):
        a = generate_synthetic(SynthConfig(seed=1, n_lectures=2, events_per_lecture=30))
        b = generate_synthetic(SynthConfig(seed=2, n_lectures=2, events_per_lecture=30))
        assert a != b

    def test_zero_prevalence_means_no_labels(self):
        corpus = generate_synthetic(SynthConfig(
            seed=4, n_lectures=2, events_per_lecture=50,
            feature_prevalences={"AQ": 0.0}))
        assert all(not t for t in corpus.truth)
        assert all(not o.events for o in corpus.observations)
        assert all("?" not in t.text for t in corpus.transcripts)

    def test_empirical_rate_tracks_prevalence(self):
        # binomial: 10,000 draws at p=0.2 stays within +-0.03 of p
        for seed in (0, 1, 2):
            corpus = generate_synthetic(SynthConfig(
                seed=seed, n_lectures=50, events_per_lecture=200,
                feature_prevalences={"AQ": 0.2}))
            rate = sum(1 for t in corpus.truth if "AQ" in t) / len(corpus.truth)
            assert 0.17 <= rate <= 0.23

    def test_annotations_cover_generating_events(self):
        corpus = generate_synthetic(SynthConfig(
            seed=3, n_lectures=3, events_per_lecture=60,
            feature_prevalences={"AQ": 0.3, "O": 0.1}))
        spans = {}
        for obs in corpus.observations:
            for ev in obs.events:
                spans.setdefault((obs.lecture_id, ev.feature.code), set()).add(
                    (ev.span.start_s, ev.span.end_s))
        for tr, labels in zip(corpus.transcripts, corpus.truth):
            for code in labels:
                assert (tr.span.start_s, tr.span.end_s) in spans[(tr.lecture_id, code)]

    def test_events_within_lecture_duration(self):
        corpus = generate_synthetic(SynthConfig(seed=5, n_lectures=2, events_per_lecture=30))
        durations = {m.lecture_id: m.duration_s for m in corpus.metas}
        for tr in corpus.transcripts:
            assert tr.span.end_s <= durations[tr.lecture_id]

    def test_prevalence_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(feature_prevalences={"AQ": 1.5})
