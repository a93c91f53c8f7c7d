"""Parsers for annotation exports, transcripts and manifests, plus synthetic corpora.

The canonical annotation format is a flat CSV with columns
``observer_id,lecture_id,feature_code,marker,time_s``; a thin adapter maps
BORIS-style aggregated exports (Behavior / Behavior type / Start / Stop
columns) onto the same row model. Transcripts arrive as JSON-lines with
``lecture_id``, ``start_s``, ``end_s`` and ``text`` per line.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .core import (
    AnnotationEvent,
    EventKind,
    LectureMeta,
    Observation,
    TimeInterval,
    TranscriptEvent,
    feature,
    feature_by_name,
)

log = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ("observer_id", "lecture_id", "feature_code", "marker", "time_s")

_SENTENCE_SPLIT = re.compile(r"[.?!]+")


class Marker:
    START = "START"
    STOP = "STOP"
    POINT = "POINT"


@dataclass(frozen=True)
class RawAnnotationRow:
    """One row of the flat annotation export."""

    observer_id: str
    lecture_id: str
    feature_code: str
    marker: str  # START | STOP | POINT
    time_s: float


@dataclass(frozen=True)
class ParseIssue:
    """One problem found while parsing, anchored to its source row."""

    kind: str  # UnmatchedStop | UnclosedStart | NegativeDuration | UnknownFeature | MalformedRecord
    row: int
    detail: str


class AnnotationParseError(Exception):
    """Raised when an annotation export cannot be turned into observations."""

    def __init__(self, issues: list[ParseIssue]):
        self.issues = issues
        summary = "; ".join(f"{i.kind}@row{i.row}: {i.detail}" for i in issues[:5])
        if len(issues) > 5:
            summary += f" (+{len(issues) - 5} more)"
        super().__init__(summary)


class TranscriptParseError(Exception):
    def __init__(self, kind: str, line: int, detail: str):
        self.kind = kind
        self.line = line
        super().__init__(f"{kind}@line{line}: {detail}")


def parse_annotations(
    rows: Iterable[RawAnnotationRow], merge_overlaps: bool = True
) -> list[Observation]:
    """Pair START/STOP markers into state events and collect observations.

    Rows are sorted by time within (observer, lecture, feature) before pairing,
    so the input order does not matter. Pairing is first-in-first-out, which
    also handles interleaved START rows produced by overlapping export events.
    Overlapping same-feature state events of one observer are merged into
    their union interval (annotator double-starts must not double-count);
    pass merge_overlaps=False to keep them separate.

    Raises AnnotationParseError listing every UnmatchedStop, UnclosedStart
    and NegativeDuration issue with its source row position.
    """
    indexed = list(enumerate(rows))
    by_group: dict[tuple[str, str, str], list[tuple[int, RawAnnotationRow]]] = defaultdict(list)
    issues: list[ParseIssue] = []
    for pos, row in indexed:
        if row.marker not in (Marker.START, Marker.STOP, Marker.POINT):
            issues.append(ParseIssue("MalformedRecord", pos, f"unknown marker {row.marker!r}"))
            continue
        by_group[(row.observer_id, row.lecture_id, row.feature_code)].append((pos, row))

    events: dict[tuple[str, str], list[AnnotationEvent]] = defaultdict(list)
    for (observer_id, lecture_id, code), group in by_group.items():
        try:
            fid = feature(code)
        except KeyError:
            issues.append(ParseIssue("UnknownFeature", group[0][0], f"feature code {code!r}"))
            continue
        group.sort(key=lambda item: (item[1].time_s, item[0]))
        open_starts: list[tuple[int, float]] = []  # FIFO queue of unmatched STARTs
        for pos, row in group:
            if row.marker == Marker.POINT:
                events[(lecture_id, observer_id)].append(
                    AnnotationEvent(lecture_id, observer_id, fid, EventKind.POINT,
                                    TimeInterval(row.time_s, row.time_s))
                )
            elif row.marker == Marker.START:
                open_starts.append((pos, row.time_s))
            else:  # STOP
                if not open_starts:
                    issues.append(ParseIssue("UnmatchedStop", pos,
                                             f"{code} STOP at {row.time_s}s without a START"))
                    continue
                _, start_t = open_starts.pop(0)
                if row.time_s <= start_t:
                    issues.append(ParseIssue("NegativeDuration", pos,
                                             f"{code} stops at {row.time_s}s, started {start_t}s"))
                    continue
                events[(lecture_id, observer_id)].append(
                    AnnotationEvent(lecture_id, observer_id, fid, EventKind.STATE,
                                    TimeInterval(start_t, row.time_s))
                )
        for pos, start_t in open_starts:
            issues.append(ParseIssue("UnclosedStart", pos,
                                     f"{code} START at {start_t}s never stopped"))

    if issues:
        raise AnnotationParseError(issues)

    observations = []
    for (lecture_id, observer_id) in sorted(events):
        evs = events[(lecture_id, observer_id)]
        if merge_overlaps:
            evs = _merge_overlapping_states(evs)
        evs.sort(key=lambda e: (e.span.start_s, e.span.end_s, e.feature.code))
        observations.append(Observation(lecture_id, observer_id, tuple(evs)))
    return observations


def _merge_overlapping_states(events: list[AnnotationEvent]) -> list[AnnotationEvent]:
    """Merge strictly overlapping same-feature state events into union intervals."""
    by_feature: dict[str, list[AnnotationEvent]] = defaultdict(list)
    out: list[AnnotationEvent] = []
    for ev in events:
        if ev.kind is EventKind.STATE:
            by_feature[ev.feature.code].append(ev)
        else:
            out.append(ev)
    for evs in by_feature.values():
        evs.sort(key=lambda e: (e.span.start_s, e.span.end_s))
        current = evs[0]
        for ev in evs[1:]:
            if ev.span.start_s < current.span.end_s:  # touching spans stay separate
                merged = TimeInterval(current.span.start_s,
                                      max(current.span.end_s, ev.span.end_s))
                current = AnnotationEvent(current.lecture_id, current.observer_id,
                                          current.feature, EventKind.STATE, merged)
            else:
                out.append(current)
                current = ev
        out.append(current)
    return out


def serialize_annotations(observations: Iterable[Observation], sink: TextIO) -> None:
    """Write observations back to the flat CSV format (inverse of parsing)."""
    writer = csv.writer(sink)
    writer.writerow(ANNOTATION_COLUMNS)
    for obs in sorted(observations, key=lambda o: (o.lecture_id, o.observer_id)):
        for ev in sorted(obs.events, key=lambda e: (e.span.start_s, e.span.end_s, e.feature.code)):
            if ev.kind is EventKind.POINT:
                writer.writerow([obs.observer_id, obs.lecture_id, ev.feature.code,
                                 Marker.POINT, _fmt_seconds(ev.span.start_s)])
            else:
                writer.writerow([obs.observer_id, obs.lecture_id, ev.feature.code,
                                 Marker.START, _fmt_seconds(ev.span.start_s)])
                writer.writerow([obs.observer_id, obs.lecture_id, ev.feature.code,
                                 Marker.STOP, _fmt_seconds(ev.span.end_s)])


def _fmt_seconds(t: float) -> str:
    return repr(float(t))


def read_annotation_csv(stream: TextIO) -> list[RawAnnotationRow]:
    """Read the canonical flat CSV into raw rows."""
    reader = csv.DictReader(stream)
    missing = set(ANNOTATION_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise AnnotationParseError(
            [ParseIssue("MalformedRecord", 0, f"missing columns: {sorted(missing)}")]
        )
    rows = []
    for i, rec in enumerate(reader, start=1):
        try:
            rows.append(RawAnnotationRow(rec["observer_id"], rec["lecture_id"],
                                         rec["feature_code"], rec["marker"].strip().upper(),
                                         float(rec["time_s"])))
        except (TypeError, ValueError) as exc:
            raise AnnotationParseError([ParseIssue("MalformedRecord", i, str(exc))]) from exc
    return rows


def read_boris_export(
    stream: TextIO,
    lecture_column: str = "Observation id",
    observer_column: str = "Subject",
    behavior_column: str = "Behavior",
    type_column: str = "Behavior type",
    start_column: str = "Start (s)",
    stop_column: str = "Stop (s)",
) -> list[RawAnnotationRow]:
    """Adapt a BORIS-style aggregated export to the canonical row model.

    Each STATE row becomes a START/STOP pair; POINT rows map directly.
    Behaviors are resolved against the catalog by code or full name.
    """
    reader = csv.DictReader(stream)
    needed = {lecture_column, observer_column, behavior_column, type_column, start_column}
    missing = needed - set(reader.fieldnames or ())
    if missing:
        raise AnnotationParseError(
            [ParseIssue("MalformedRecord", 0, f"missing columns: {sorted(missing)}")]
        )
    rows = []
    for i, rec in enumerate(reader, start=1):
        try:
            fid = feature_by_name(rec[behavior_column])
        except KeyError as exc:
            raise AnnotationParseError([ParseIssue("UnknownFeature", i, str(exc))]) from exc
        kind = rec[type_column].strip().upper()
        lecture_id, observer_id = rec[lecture_column], rec[observer_column]
        try:
            start = float(rec[start_column])
            if kind == "POINT":
                rows.append(RawAnnotationRow(observer_id, lecture_id, fid.code,
                                             Marker.POINT, start))
            else:  # STATE rows carry both boundaries
                stop = float(rec[stop_column])
                rows.append(RawAnnotationRow(observer_id, lecture_id, fid.code,
                                             Marker.START, start))
                rows.append(RawAnnotationRow(observer_id, lecture_id, fid.code,
                                             Marker.STOP, stop))
        except (TypeError, ValueError) as exc:
            raise AnnotationParseError([ParseIssue("MalformedRecord", i, str(exc))]) from exc
    return rows


def serialize_observations(observations: Iterable[Observation], sink: TextIO) -> None:
    """Normalized JSON-lines form: one observation per line with its events."""
    for obs in sorted(observations, key=lambda o: (o.lecture_id, o.observer_id)):
        sink.write(json.dumps({
            "lecture_id": obs.lecture_id,
            "observer_id": obs.observer_id,
            "events": [
                {"feature": ev.feature.code, "kind": ev.kind.value,
                 "start_s": ev.span.start_s, "end_s": ev.span.end_s}
                for ev in sorted(obs.events,
                                 key=lambda e: (e.span.start_s, e.span.end_s, e.feature.code))
            ],
        }, sort_keys=True) + "\n")


def parse_observations(stream: TextIO) -> list[Observation]:
    observations = []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        events = tuple(
            AnnotationEvent(rec["lecture_id"], rec["observer_id"], feature(e["feature"]),
                            EventKind(e["kind"]),
                            TimeInterval(float(e["start_s"]), float(e["end_s"])))
            for e in rec["events"]
        )
        observations.append(Observation(rec["lecture_id"], rec["observer_id"], events))
    return observations


def count_sentences(text: str) -> int:
    """Number of terminal-punctuation-delimited sentences (., ?, !); at least 1."""
    parts = [p for p in _SENTENCE_SPLIT.split(text) if p.strip()]
    return max(1, len(parts))


def parse_transcript(stream: TextIO) -> list[TranscriptEvent]:
    """Parse transcript JSON-lines into events with computed sentence counts.

    Malformed records (missing fields, empty text, end <= start) raise
    TranscriptParseError; non-monotonic timestamps within a lecture only log
    a warning.
    """
    events: list[TranscriptEvent] = []
    last_start: dict[str, float] = {}
    for i, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TranscriptParseError("MalformedRecord", i, f"bad JSON: {exc}") from exc
        try:
            lecture_id = rec["lecture_id"]
            start_s, end_s = float(rec["start_s"]), float(rec["end_s"])
            text = rec["text"]
        except (KeyError, TypeError, ValueError) as exc:
            raise TranscriptParseError("MalformedRecord", i, f"missing/invalid field: {exc}") from exc
        if not isinstance(text, str) or not text.strip():
            raise TranscriptParseError("MalformedRecord", i, "empty text")
        if end_s <= start_s or start_s < 0:
            raise TranscriptParseError("MalformedRecord", i,
                                       f"invalid span [{start_s}, {end_s})")
        if lecture_id in last_start and start_s < last_start[lecture_id]:
            log.warning("non-monotonic timestamps in lecture %s at line %d", lecture_id, i)
        last_start[lecture_id] = start_s
        events.append(TranscriptEvent(lecture_id, TimeInterval(start_s, end_s),
                                      text, count_sentences(text)))
    return events


def serialize_transcript(events: Iterable[TranscriptEvent], sink: TextIO) -> None:
    for ev in events:
        sink.write(json.dumps({"lecture_id": ev.lecture_id, "start_s": ev.span.start_s,
                               "end_s": ev.span.end_s, "text": ev.text},
                              ensure_ascii=False, sort_keys=True) + "\n")


@dataclass(frozen=True)
class Manifest:
    """Index of a dataset on disk: lectures plus the files holding their data."""

    lectures: tuple[LectureMeta, ...]
    annotation_files: tuple[str, ...]
    transcript_files: tuple[str, ...]
    embedding_files: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ids = [m.lecture_id for m in self.lectures]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate lecture_ids in manifest")

    def lecture(self, lecture_id: str) -> LectureMeta:
        for m in self.lectures:
            if m.lecture_id == lecture_id:
                return m
        raise KeyError(f"lecture {lecture_id!r} not in manifest")


def load_manifest(path: Path) -> Manifest:
    data = json.loads(Path(path).read_text())
    lectures = tuple(
        LectureMeta(rec["lecture_id"], rec["series_id"], float(rec["duration_s"]))
        for rec in data["lectures"]
    )
    return Manifest(lectures,
                    tuple(data.get("annotation_files", ())),
                    tuple(data.get("transcript_files", ())),
                    tuple(data.get("embedding_files", ())))


def save_manifest(manifest: Manifest, path: Path) -> None:
    data = {
        "lectures": [
            {"lecture_id": m.lecture_id, "series_id": m.series_id, "duration_s": m.duration_s}
            for m in manifest.lectures
        ],
        "annotation_files": list(manifest.annotation_files),
        "transcript_files": list(manifest.transcript_files),
        "embedding_files": list(manifest.embedding_files),
    }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------

QUESTION_MARK_RULE = "?"

# Marker vocabulary for planted rules: a positive sample of the feature
# always carries the marker; negatives never do.
DEFAULT_PLANTED_RULES: dict[str, str] = {
    "AQ": QUESTION_MARK_RULE,
    "GQ": "rhetorically",
    "O": "outline",
    "S": "quiz",
    "AT": "slide",
    "SU": "recap",
}

_FILLER_WORDS = (
    "the value of this function is defined on domain and we compute it here "
    "so let us look at that example again now consider when both sides are "
    "equal then for every number there exists some point where limits hold "
    "because matrix rows become columns under transpose which gives us more"
).split()


@dataclass(frozen=True)
class SynthConfig:
    """Deterministic synthetic-corpus recipe; the seed fully determines output."""

    seed: int = 0
    n_lectures: int = 5
    events_per_lecture: int = 200
    feature_prevalences: dict[str, float] = field(
        default_factory=lambda: {"AQ": 0.15}
    )
    planted_rules: dict[str, str] = field(
        default_factory=lambda: dict(DEFAULT_PLANTED_RULES)
    )
    observers_per_lecture: int = 3
    observer_teams: int = 1          # disjoint annotator teams round-robined over lectures
    observer_miss_rate: float = 0.0  # chance an observer skips a planted event
    question_noise_rate: float = 0.0  # chance a negative sentence still ends with '?'
    series_size: int = 4             # lectures per course series

    def __post_init__(self) -> None:
        for code, p in self.feature_prevalences.items():
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"prevalence for {code} outside [0,1]: {p}")


@dataclass(frozen=True)
class SyntheticCorpus:
    observations: tuple[Observation, ...]
    transcripts: tuple[TranscriptEvent, ...]
    truth: tuple[frozenset[str], ...]  # ground-truth label codes per transcript
    metas: tuple[LectureMeta, ...]


def generate_synthetic(config: SynthConfig) -> SyntheticCorpus:
    """Build a corpus whose true label set per transcript event is known by construction.

    Every planted annotation interval equals the span of its generating
    transcript event, and transcript events never overlap, so interval
    labeling must reproduce the planted truth exactly (at zero miss rate).
    """
    rng = np.random.default_rng(config.seed)
    features = [feature(code) for code in sorted(config.feature_prevalences)]
    prevalences = np.array([config.feature_prevalences[f.code] for f in features])

    transcripts: list[TranscriptEvent] = []
    truth: list[frozenset[str]] = []
    metas: list[LectureMeta] = []
    events_by_observer: dict[tuple[str, str], list[AnnotationEvent]] = defaultdict(list)

    for li in range(config.n_lectures):
        lecture_id = f"lec{li:03d}"
        series_id = f"ser{li // max(1, config.series_size):02d}"
        team = li % max(1, config.observer_teams)
        observers = [f"obs{team:02d}_{k}" for k in range(config.observers_per_lecture)]

        t = float(rng.uniform(0.5, 2.0))
        for _ in range(config.events_per_lecture):
            duration = float(rng.uniform(4.0, 12.0))
            span = TimeInterval(round(t, 3), round(t + duration, 3))
            t = span.end_s + float(rng.uniform(0.5, 2.0))

            positives = [f for f, p in zip(features, prevalences) if rng.random() < p]
            label_set = frozenset(f.code for f in positives)
            text = _synthesize_text(rng, label_set, config)
            transcripts.append(TranscriptEvent(lecture_id, span, text, count_sentences(text)))
            truth.append(label_set)

            for f in positives:
                for obs_id in observers:
                    if config.observer_miss_rate > 0 and rng.random() < config.observer_miss_rate:
                        continue
                    events_by_observer[(lecture_id, obs_id)].append(
                        AnnotationEvent(lecture_id, obs_id, f, EventKind.STATE, span)
                    )
        # every observer appears even with no events, so observer counts are stable
        for obs_id in observers:
            events_by_observer.setdefault((lecture_id, obs_id), [])
        metas.append(LectureMeta(lecture_id, series_id, round(t + 5.0, 3)))

    observations = tuple(
        Observation(lecture_id, obs_id, tuple(evs))
        for (lecture_id, obs_id), evs in sorted(events_by_observer.items())
    )
    return SyntheticCorpus(observations, tuple(transcripts), tuple(truth), tuple(metas))


def _synthesize_text(rng: np.random.Generator, labels: frozenset[str],
                     config: SynthConfig) -> str:
    """Compose 1-3 sentences; positives carry their feature markers, negatives never do."""
    n_sentences = int(rng.integers(1, 4))
    question = any(config.planted_rules.get(code) == QUESTION_MARK_RULE for code in labels)
    marker_words = [rule for code in sorted(labels)
                    if (rule := config.planted_rules.get(code))
                    and rule != QUESTION_MARK_RULE]
    sentences = []
    for si in range(n_sentences):
        k = int(rng.integers(4, 10))
        words = [_FILLER_WORDS[int(rng.integers(0, len(_FILLER_WORDS)))] for _ in range(k)]
        terminal = "?" if question else (
            "?" if (config.question_noise_rate > 0 and rng.random() < config.question_noise_rate)
            else "."
        )
        sentences.append(" ".join(words) + terminal)
    for word in marker_words:  # one guaranteed occurrence per marked feature
        idx = int(rng.integers(0, n_sentences))
        body, terminal = sentences[idx][:-1], sentences[idx][-1]
        sentences[idx] = f"{body} {word}{terminal}"
    return " ".join(sentences)


def serialize_truth(truth: Iterable[frozenset[str]],
                    transcripts: Iterable[TranscriptEvent], sink: TextIO) -> None:
    for labels, ev in zip(truth, transcripts):
        sink.write(json.dumps({"lecture_id": ev.lecture_id, "start_s": ev.span.start_s,
                               "labels": sorted(labels)}, sort_keys=True) + "\n")
