"""Assign multi-label feature sets to transcript events; pick frame instants for vision.

Transcript labeling uses half-open interval intersection against every
observer's events, pooled by policy (union of observers, or strict majority
of the lecture's observers). Frame sampling takes the midpoint of every
retained visual event, one sample per event.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, TextIO

from .core import (
    AnnotationEvent,
    LectureMeta,
    Observation,
    TEXT_FEATURES,
    TimeInterval,
    TranscriptEvent,
    VISUAL_FEATURES,
    intersects,
)

VISUAL_INDEX = {f.code: i for i, f in enumerate(VISUAL_FEATURES)}
TEXT_CODES = frozenset(f.code for f in TEXT_FEATURES)


class LabelPolicy(Enum):
    UNION = "union"
    MAJORITY = "majority"


class UnknownLecture(Exception):
    """A transcript references a lecture with no annotations at all."""


@dataclass(frozen=True)
class LabeledTextSample:
    """A transcript event plus its pooled text-task label set."""

    transcript: TranscriptEvent
    labels: frozenset[str]
    source_observers: frozenset[str]

    def __post_init__(self) -> None:
        unknown = self.labels - TEXT_CODES
        if unknown:
            raise ValueError(f"labels outside the text-task set: {sorted(unknown)}")


@dataclass(frozen=True)
class FrameSampleSpec:
    """One sampling instant for the visual experiment with its 9-dim label vector."""

    lecture_id: str
    time_s: float
    labels: tuple[int, ...]  # indexed in VISUAL_FEATURES order

    def __post_init__(self) -> None:
        if len(self.labels) != len(VISUAL_FEATURES):
            raise ValueError("label vector must cover all visual features")


def label_transcripts(
    events: Sequence[TranscriptEvent],
    annotations: Sequence[Observation],
    policy: LabelPolicy = LabelPolicy.UNION,
) -> list[LabeledTextSample]:
    """Label each transcript event with the text-task features whose spans intersect it.

    Under UNION a feature is set iff any observer has an intersecting event of
    it; under MAJORITY, iff strictly more than half of that lecture's
    observers do. Output is ordered by (lecture_id, start_s).
    """
    obs_by_lecture: dict[str, list[Observation]] = defaultdict(list)
    for obs in annotations:
        obs_by_lecture[obs.lecture_id].append(obs)

    missing = {ev.lecture_id for ev in events} - set(obs_by_lecture)
    if missing:
        raise UnknownLecture(f"transcripts reference unannotated lectures: {sorted(missing)}")

    samples: list[LabeledTextSample] = []
    for lecture_id in sorted({ev.lecture_id for ev in events}):
        lecture_events = sorted((ev for ev in events if ev.lecture_id == lecture_id),
                                key=lambda ev: (ev.span.start_s, ev.span.end_s))
        observers = sorted({o.observer_id for o in obs_by_lecture[lecture_id]})
        majority_threshold = len(observers) / 2.0

        # (feature, observer) hits per transcript index, via a sorted interval probe
        index = _IntervalIndex(
            (ev.span, (ev.feature.code, obs.observer_id))
            for obs in obs_by_lecture[lecture_id]
            for ev in obs.events
            if ev.feature.code in TEXT_CODES
        )
        for tr in lecture_events:
            hits: dict[str, set[str]] = defaultdict(set)
            for code, observer_id in index.overlapping(tr.span):
                hits[code].add(observer_id)
            if policy is LabelPolicy.UNION:
                labels = {code for code, who in hits.items() if who}
            else:
                labels = {code for code, who in hits.items() if len(who) > majority_threshold}
            contributors = frozenset().union(*(hits[code] for code in labels)) if labels else frozenset()
            samples.append(LabeledTextSample(tr, frozenset(labels), contributors))
    return samples


class _IntervalIndex:
    """Sorted-start interval set answering half-open overlap probes.

    Start positions are bisected to bound the candidate range; a running
    maximum of end times prunes the scan on the left.
    """

    def __init__(self, items: Iterable[tuple[TimeInterval, object]]):
        entries = sorted(items, key=lambda it: (it[0].start_s, it[0].end_s))
        self._starts = [it[0].start_s for it in entries]
        self._entries = entries
        # prefix_max_end[i] = max end over entries[0..i]
        self._prefix_max_end: list[float] = []
        running = float("-inf")
        for span, _ in entries:
            running = max(running, span.end_s)
            self._prefix_max_end.append(running)

    def overlapping(self, probe: TimeInterval) -> Iterable[object]:
        hi = bisect_right(self._starts, probe.end_s)
        for i in range(hi - 1, -1, -1):
            if self._prefix_max_end[i] < probe.start_s:
                break  # everything further left ends before the probe begins
            span, payload = self._entries[i]
            if intersects(span, probe):
                yield payload


def select_frame_samples(
    annotations: Sequence[Observation],
    metas: Sequence[LectureMeta],
    bucket_s: float = 1.0,
    reintersect: bool = True,
) -> list[FrameSampleSpec]:
    """Pick one frame instant per retained visual event, at the event midpoint.

    Events whose midpoints share the same 1-second bucket of one lecture are
    collapsed to the earliest-starting event (duplicates and simultaneous
    events carry no extra information). Each spec starts with only the
    generating event's feature set; with reintersect=True, co-occurring
    positives are added by probing the midpoint against every observer's
    visual events.
    """
    known = {m.lecture_id for m in metas}
    visual_events: list[AnnotationEvent] = []
    for obs in annotations:
        if obs.lecture_id not in known:
            raise UnknownLecture(f"annotations reference unknown lecture {obs.lecture_id!r}")
        visual_events.extend(ev for ev in obs.events if ev.feature.code in VISUAL_INDEX)

    # deterministic retention: earliest start wins a bucket, ties broken stably
    visual_events.sort(key=lambda ev: (ev.lecture_id, ev.span.start_s, ev.span.end_s,
                                       VISUAL_INDEX[ev.feature.code], ev.observer_id))
    retained: dict[tuple[str, int], AnnotationEvent] = {}
    for ev in visual_events:
        key = (ev.lecture_id, int(ev.span.midpoint // bucket_s))
        retained.setdefault(key, ev)

    by_lecture_index: dict[str, _IntervalIndex] = {}
    if reintersect:
        grouped: dict[str, list[tuple[TimeInterval, str]]] = defaultdict(list)
        for ev in visual_events:
            grouped[ev.lecture_id].append((ev.span, ev.feature.code))
        by_lecture_index = {lec: _IntervalIndex(items) for lec, items in grouped.items()}

    specs = []
    for ev in sorted(retained.values(),
                     key=lambda e: (e.lecture_id, e.span.start_s, e.span.end_s,
                                    VISUAL_INDEX[e.feature.code])):
        labels = [0] * len(VISUAL_FEATURES)
        labels[VISUAL_INDEX[ev.feature.code]] = 1
        mid = ev.span.midpoint
        if reintersect:
            probe = TimeInterval(mid, mid)
            for code in by_lecture_index[ev.lecture_id].overlapping(probe):
                labels[VISUAL_INDEX[code]] = 1
        specs.append(FrameSampleSpec(ev.lecture_id, mid, tuple(labels)))
    return specs


def serialize_labeled(samples: Iterable[LabeledTextSample], sink: TextIO) -> None:
    """Write labeled samples as JSON-lines: lecture_id, start_s, end_s, text, labels."""
    for s in samples:
        sink.write(json.dumps({
            "lecture_id": s.transcript.lecture_id,
            "start_s": s.transcript.span.start_s,
            "end_s": s.transcript.span.end_s,
            "text": s.transcript.text,
            "labels": sorted(s.labels),
            "observers": sorted(s.source_observers),
        }, ensure_ascii=False, sort_keys=True) + "\n")


def parse_labeled(stream: TextIO) -> list[LabeledTextSample]:
    from .ingestion import count_sentences  # local import avoids a cycle

    samples = []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        tr = TranscriptEvent(rec["lecture_id"],
                             TimeInterval(float(rec["start_s"]), float(rec["end_s"])),
                             rec["text"], count_sentences(rec["text"]))
        samples.append(LabeledTextSample(tr, frozenset(rec["labels"]),
                                         frozenset(rec.get("observers", ()))))
    return samples


def serialize_frame_specs(specs: Iterable[FrameSampleSpec], sink: TextIO) -> None:
    for spec in specs:
        sink.write(json.dumps({"lecture_id": spec.lecture_id, "time_s": spec.time_s,
                               "labels": list(spec.labels)}, sort_keys=True) + "\n")


def parse_frame_specs(stream: TextIO) -> list[FrameSampleSpec]:
    specs = []
    for line in stream:
        line = line.strip()
        if line:
            rec = json.loads(line)
            specs.append(FrameSampleSpec(rec["lecture_id"], float(rec["time_s"]),
                                         tuple(int(v) for v in rec["labels"])))
    return specs
