"""Domain types and interval algebra shared by every pipeline stage.

All times are seconds as doubles; no frame-rate quantization happens here.
Every type is immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Experiment(Enum):
    """Which detection experiment a feature belongs to."""

    TEXT = "text"
    VISUAL = "visual"
    AUDIO_ONLY = "audio_only"
    UNUSED = "unused"


@dataclass(frozen=True)
class FeatureId:
    """One entry of the didactic-feature catalog."""

    code: str
    name: str
    experiment: Experiment

    def __str__(self) -> str:
        return self.code


# The full annotation catalog. Codes are the vocabulary used by annotation
# exports and label files; each maps to exactly one experiment tag.
FEATURES: tuple[FeatureId, ...] = (
    # Text-detectable behaviours
    FeatureId("AQ", "Asking questions", Experiment.TEXT),
    FeatureId("GQ", "Giving questions to students", Experiment.TEXT),
    FeatureId("O", "Organization: giving class outline", Experiment.TEXT),
    FeatureId("S", "Session on tests", Experiment.TEXT),
    FeatureId("AT", "Active teacher stands by slides and explains them", Experiment.TEXT),
    FeatureId("SU", "Summing up", Experiment.TEXT),
    # Audio-only behaviours (dropped from the text task; non-verbal)
    FeatureId("LAU", "Laughter", Experiment.AUDIO_ONLY),
    FeatureId("INT", "Use intonation to emphasise important issues", Experiment.AUDIO_ONLY),
    # Visual slide/behaviour features
    FeatureId("MP", "Movement across podium", Experiment.VISUAL),
    FeatureId("FA", "Films or animations in slides", Experiment.VISUAL),
    FeatureId("IM", "Images in slides", Experiment.VISUAL),
    FeatureId("ST", "Session on tests (visual)", Experiment.VISUAL),
    FeatureId("CH", "Charts in slides", Experiment.VISUAL),
    FeatureId("WS", "Website", Experiment.VISUAL),
    FeatureId("WW", "Writing on a whiteboard", Experiment.VISUAL),
    FeatureId("WSL", "Writing on slides", Experiment.VISUAL),
    FeatureId("EC", "Eye contact", Experiment.VISUAL),
    # Catalog entries not used by any experiment
    FeatureId("BIB", "Referring to bibliography, other researchers", Experiment.UNUSED),
    FeatureId("HIN", "Giving hints how to do something", Experiment.UNUSED),
    FeatureId("SQ", "Students are asking questions", Experiment.UNUSED),
    FeatureId("ASG", "Assignments", Experiment.UNUSED),
    FeatureId("DEM", "Demonstration", Experiment.UNUSED),
    FeatureId("DIS", "Discipline", Experiment.UNUSED),
    FeatureId("SD", "Students discussion", Experiment.UNUSED),
)

FEATURES_BY_CODE: dict[str, FeatureId] = {f.code: f for f in FEATURES}

# Canonical class orders. TEXT_FEATURES drives the 6-way text task;
# VISUAL_FEATURES fixes the index order of every 9-dim label vector.
TEXT_FEATURES: tuple[FeatureId, ...] = tuple(
    f for f in FEATURES if f.experiment is Experiment.TEXT
)
VISUAL_FEATURES: tuple[FeatureId, ...] = tuple(
    f for f in FEATURES if f.experiment is Experiment.VISUAL
)


def feature(code: str) -> FeatureId:
    """Look up a catalog feature by its code (case-insensitive)."""
    fid = FEATURES_BY_CODE.get(code) or FEATURES_BY_CODE.get(code.upper())
    if fid is None:
        raise KeyError(f"unknown feature code: {code!r}")
    return fid


def feature_by_name(name: str) -> FeatureId:
    """Look up a catalog feature by code or full display name."""
    key = name.strip().lower()
    for f in FEATURES:
        if key == f.code.lower() or key == f.name.lower():
            return f
    raise KeyError(f"unknown feature name: {name!r}")


@dataclass(frozen=True)
class TimeInterval:
    """A half-open time span [start_s, end_s) in seconds.

    Degenerate intervals (start == end) represent instants.
    """

    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if not (self.start_s >= 0.0):
            raise ValueError(f"negative start: {self.start_s}")
        if not (self.start_s <= self.end_s):
            raise ValueError(f"interval ends before it starts: [{self.start_s}, {self.end_s})")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    @property
    def midpoint(self) -> float:
        return (self.start_s + self.end_s) / 2.0


def intersects(a: TimeInterval, b: TimeInterval) -> bool:
    """True iff the two half-open intervals share positive overlap.

    A degenerate (point) interval at t intersects b iff b.start_s <= t < b.end_s;
    two points never intersect. Touching endpoints do not intersect.
    """
    if a.duration == 0.0 and b.duration == 0.0:
        return False
    if a.duration == 0.0:
        return b.start_s <= a.start_s < b.end_s
    if b.duration == 0.0:
        return a.start_s <= b.start_s < a.end_s
    return max(a.start_s, b.start_s) < min(a.end_s, b.end_s)


class EventKind(Enum):
    STATE = "state"
    POINT = "point"


@dataclass(frozen=True)
class AnnotationEvent:
    """One state or point occurrence of a feature, by one observer, in one lecture.

    Kind/duration consistency is not enforced at construction; it is checked
    by validate_observation, which reports violations as data.
    """

    lecture_id: str
    observer_id: str
    feature: FeatureId
    kind: EventKind
    span: TimeInterval


@dataclass(frozen=True)
class Observation:
    """All events recorded by one observer for one lecture."""

    lecture_id: str
    observer_id: str
    events: tuple[AnnotationEvent, ...]


@dataclass(frozen=True)
class TranscriptEvent:
    """One ASR speech segment: one or more sentences close together in time."""

    lecture_id: str
    span: TimeInterval
    text: str
    sentence_count: int = 1

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("transcript event has empty text")
        if self.span.duration <= 0.0:
            raise ValueError("transcript event must have positive duration")
        if self.sentence_count < 1:
            raise ValueError("sentence_count must be >= 1")


@dataclass(frozen=True)
class LectureMeta:
    """Identity, course-series grouping key, and duration of one lecture."""

    lecture_id: str
    series_id: str
    duration_s: float

    def __post_init__(self) -> None:
        if not (self.duration_s > 0.0):
            raise ValueError("lecture duration must be positive")


@dataclass(frozen=True)
class Violation:
    """One invariant violation found while validating data. Data, not an exception."""

    code: str
    message: str
    event_index: int | None = None


def validate_observation(obs: Observation, meta: LectureMeta) -> list[Violation]:
    """Return every invariant violation in an observation against its lecture.

    Checks id consistency, span range against the lecture duration, and
    kind/duration agreement. An empty list means the observation is valid.
    """
    violations: list[Violation] = []
    if obs.lecture_id != meta.lecture_id:
        violations.append(
            Violation("id_mismatch", f"observation is for lecture {obs.lecture_id!r}, "
                                     f"meta describes {meta.lecture_id!r}")
        )
    for i, ev in enumerate(obs.events):
        if ev.lecture_id != obs.lecture_id or ev.observer_id != obs.observer_id:
            violations.append(Violation("id_mismatch", "event ids differ from observation ids", i))
        if ev.span.duration < 0.0:
            violations.append(Violation("negative_duration", "span ends before it starts", i))
        if ev.span.start_s < 0.0 or ev.span.end_s > meta.duration_s:
            violations.append(
                Violation("span_out_of_range",
                          f"[{ev.span.start_s}, {ev.span.end_s}) outside "
                          f"[0, {meta.duration_s})", i)
            )
        if ev.kind is EventKind.POINT and ev.span.duration != 0.0:
            violations.append(Violation("kind_duration", "point event with nonzero duration", i))
        if ev.kind is EventKind.STATE and ev.span.duration <= 0.0:
            violations.append(Violation("kind_duration", "state event without positive duration", i))
    return violations
