"""Grouped train/dev/test splitting and per-split descriptive statistics.

A group (annotator team or lecture series) never straddles splits: groups are
shuffled by seed, then each is assigned greedily to the split whose realized
sample fraction sits furthest below its target. Realized fractions are
measured in samples, not groups, and are recorded next to the targets.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from .core import TEXT_FEATURES
from .labeling import LabeledTextSample

SPLITS = ("train", "dev", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)


class TooFewGroups(Exception):
    """Fewer than three groups cannot populate three splits."""


class EmptySplit(Exception):
    """Statistics are undefined over an empty split."""


@dataclass(frozen=True)
class SplitManifest:
    """Group-to-split assignment plus targets, realized fractions and provenance."""

    assignment: dict[str, str]  # group key -> train|dev|test
    ratios: tuple[float, float, float]
    realized: tuple[float, float, float]  # sample fractions actually achieved
    group_by: str
    seed: int

    def split_of(self, group_key: Hashable) -> str:
        return self.assignment[str(group_key)]


def split(
    group_keys: Sequence[Hashable],
    group_by: str = "group",
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitManifest:
    """Partition samples into train/dev/test without splitting any group.

    group_keys carries one key per sample (observer-derived for text,
    series for vision). Groups are shuffled by seed and each assigned to the
    split with the largest remaining sample deficit, so realized fractions
    track the targets as closely as group atomicity allows.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    sizes = Counter(str(k) for k in group_keys)
    if len(sizes) < len(SPLITS):
        raise TooFewGroups(f"need at least {len(SPLITS)} groups, got {len(sizes)}")

    order = sorted(sizes)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)

    total = sum(sizes.values())
    assigned = [0, 0, 0]
    assignment: dict[str, str] = {}
    for key in order:
        deficits = [ratios[i] - assigned[i] / total for i in range(len(SPLITS))]
        target = max(range(len(SPLITS)), key=lambda i: (deficits[i], -i))
        assignment[key] = SPLITS[target]
        assigned[target] += sizes[key]

    # with few groups the greedy pass can starve a split; donate the smallest
    # group from the fullest multi-group split so all three are populated
    counts = Counter(assignment.values())
    for i, name in enumerate(SPLITS):
        if counts.get(name, 0) > 0:
            continue
        donor = max((s for s in SPLITS if counts.get(s, 0) > 1),
                    key=lambda s: assigned[SPLITS.index(s)])
        moved = min((k for k, v in assignment.items() if v == donor),
                    key=lambda k: (sizes[k], k))
        assignment[moved] = name
        counts[donor] -= 1
        counts[name] = 1
        assigned[SPLITS.index(donor)] -= sizes[moved]
        assigned[i] += sizes[moved]

    realized = tuple(assigned[i] / total for i in range(len(SPLITS)))
    return SplitManifest(dict(sorted(assignment.items())), tuple(ratios), realized,
                         group_by, seed)


def partition(samples: Sequence, group_keys: Sequence[Hashable],
              manifest: SplitManifest) -> dict[str, list]:
    """Materialize the three sample lists from a manifest."""
    out: dict[str, list] = {name: [] for name in SPLITS}
    for sample, key in zip(samples, group_keys):
        out[manifest.assignment[str(key)]].append(sample)
    return out


def observer_component_keys(samples: Sequence[LabeledTextSample]) -> list[str]:
    """Group key per sample: lectures sharing any observer form one atomic group.

    This is the strongest grouping that keeps all of one annotator's lectures
    in a single split even though several annotators cover each lecture. The
    key is the smallest observer id in the component.
    """
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: str, b: str) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    lecture_observers: dict[str, set[str]] = defaultdict(set)
    for s in samples:
        lecture_observers[s.transcript.lecture_id] |= s.source_observers
    for lecture_id, observers in lecture_observers.items():
        anchor = f"lec::{lecture_id}"
        for obs in observers:
            union(anchor, f"obs::{obs}")

    keys = []
    for s in samples:
        root = find(f"lec::{s.transcript.lecture_id}")
        keys.append(root.replace("lec::", "grp::", 1).replace("obs::", "grp::", 1))
    return keys


@dataclass(frozen=True)
class SplitStats:
    mean_sentences: float
    mean_duration_s: float
    positive_rates: dict[str, float]  # feature code -> percentage in [0, 100]
    questions_rate: float  # percentage of samples carrying AQ or GQ
    n_samples: int


@dataclass(frozen=True)
class DatasetStats:
    per_split: dict[str, SplitStats]


def compute_stats(samples_per_split: dict[str, Sequence[LabeledTextSample]]) -> DatasetStats:
    """Mean event length/duration and per-feature positive percentages per split."""
    per_split = {}
    for name, samples in samples_per_split.items():
        if not samples:
            raise EmptySplit(f"split {name!r} is empty")
        n = len(samples)
        mean_sentences = sum(s.transcript.sentence_count for s in samples) / n
        mean_duration = sum(s.transcript.span.duration for s in samples) / n
        rates = {
            f.code: 100.0 * sum(1 for s in samples if f.code in s.labels) / n
            for f in TEXT_FEATURES
        }
        questions = 100.0 * sum(1 for s in samples if s.labels & {"AQ", "GQ"}) / n
        per_split[name] = SplitStats(mean_sentences, mean_duration, rates, questions, n)
    return DatasetStats(per_split)


def stats_table(stats: DatasetStats) -> str:
    """Aligned-text rendering of the per-split statistics."""
    names = [n for n in SPLITS if n in stats.per_split] + \
            [n for n in stats.per_split if n not in SPLITS]
    rows: list[tuple[str, list[str]]] = [
        ("Samples", [str(stats.per_split[n].n_samples) for n in names]),
        ("Mean length of an event (sentences)",
         [f"{stats.per_split[n].mean_sentences:.2f}" for n in names]),
        ("Mean duration of an event (s)",
         [f"{stats.per_split[n].mean_duration_s:.2f}" for n in names]),
    ]
    for f in TEXT_FEATURES:
        rows.append((f"{f.name} ({f.code})",
                     [f"{stats.per_split[n].positive_rates[f.code]:.2f}%" for n in names]))
    rows.append(("Questions (AQ or GQ)",
                 [f"{stats.per_split[n].questions_rate:.2f}%" for n in names]))

    label_w = max(len(r[0]) for r in rows)
    col_w = max(6, *(len(c) for _, cells in rows for c in cells),
                *(len(n) for n in names))
    lines = [" " * label_w + "  " + "  ".join(n.rjust(col_w) for n in names)]
    for label, cells in rows:
        lines.append(label.ljust(label_w) + "  " + "  ".join(c.rjust(col_w) for c in cells))
    return "\n".join(lines) + "\n"


def save_split_manifest(manifest: SplitManifest, path: Path) -> None:
    Path(path).write_text(json.dumps({
        "assignment": manifest.assignment,
        "ratios": list(manifest.ratios),
        "realized": list(manifest.realized),
        "group_by": manifest.group_by,
        "seed": manifest.seed,
    }, indent=2, sort_keys=True) + "\n")


def load_split_manifest(path: Path) -> SplitManifest:
    data = json.loads(Path(path).read_text())
    return SplitManifest(data["assignment"], tuple(data["ratios"]),
                         tuple(data["realized"]), data["group_by"], int(data["seed"]))


def stats_json(stats: DatasetStats) -> dict:
    return {
        name: {
            "n_samples": s.n_samples,
            "mean_sentences": s.mean_sentences,
            "mean_duration_s": s.mean_duration_s,
            "positive_rates_pct": s.positive_rates,
            "questions_rate_pct": s.questions_rate,
        }
        for name, s in stats.per_split.items()
    }
