"""Turn clusters into named environmental states via operator threshold rules.

A cluster earns a ``(phenomenon, sensor)`` tag when its raw-unit centroid
exceeds the rule threshold on at least one matching channel at that sensor
(axis-wise OR).  Comparison is strictly greater-than, so a centroid exactly
at a threshold does not fire the rule.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import errors
from ._util import fmt_number, parse_number
from .features import FeatureLayout, WindowFeatures
from .timeseries import TimeSegmentSet

PHENOMENA = ("earthquake", "high_microseism", "high_anthropogenic")


@dataclass(frozen=True)
class ThresholdRule:
    """One operator threshold: phenomenon fires when a matching channel exceeds it."""

    phenomenon: str
    band: str
    threshold: float
    sensor: str = "*"
    axis: str = "*"
    feature: str = "mean"

    def __post_init__(self):
        if self.threshold <= 0:
            raise errors.ConfigError(f"threshold must be positive, got {self.threshold}")
        if not self.phenomenon:
            raise errors.ConfigError("rule needs a phenomenon name")

    def matches(self, channel, feature: str) -> bool:
        return (
            feature == self.feature
            and channel.band.name == self.band
            and self.sensor in ("*", channel.sensor)
            and self.axis in ("*", channel.axis)
        )


def read_rules_json(path) -> list[ThresholdRule]:
    """Rules file: JSON array of rule objects with ``threshold_nm_s`` in raw units."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise errors.ConfigError(f"{path}: rules file must be a non-empty JSON array")
    rules = []
    for i, item in enumerate(raw):
        try:
            rules.append(
                ThresholdRule(
                    phenomenon=item["phenomenon"],
                    band=item["band"],
                    threshold=float(item["threshold_nm_s"]),
                    sensor=item.get("sensor", "*"),
                    axis=item.get("axis", "*"),
                    feature=item.get("feature", "mean"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise errors.ConfigError(f"{path}: bad rule #{i}: {item!r}") from exc
    return rules


@dataclass(frozen=True)
class StateLabel:
    """Semantic annotation of one cluster: a set of (phenomenon, sensor) tags."""

    cluster_id: int
    tags: frozenset

    @property
    def quiet(self) -> bool:
        return not self.tags

    def tag_text(self) -> str:
        return ";".join(f"{p}@{s}" for p, s in sorted(self.tags))

    @staticmethod
    def from_tag_text(cluster_id: int, text: str) -> "StateLabel":
        tags = set()
        if text:
            for token in text.split(";"):
                phenom, _, sensor = token.partition("@")
                if not phenom or not sensor:
                    raise errors.MalformedRow(f"bad tag token {token!r}")
                tags.add((phenom, sensor))
        return StateLabel(cluster_id, frozenset(tags))


def label_cluster(
    centroid_raw: np.ndarray,
    rules: Sequence[ThresholdRule],
    layout: FeatureLayout,
    cluster_id: int = 0,
) -> StateLabel:
    """Compare a raw-unit centroid against every rule and collect fired tags."""
    centroid_raw = np.asarray(centroid_raw, dtype=np.float64)
    if centroid_raw.shape != (len(layout),):
        raise errors.LayoutMismatch(
            f"centroid length {centroid_raw.shape} does not match layout ({len(layout)})"
        )
    tags = set()
    for rule in rules:
        matched = [
            (ch, i)
            for i, (ch, feat) in enumerate(layout.columns)
            if rule.matches(ch, feat)
        ]
        if not matched:
            raise errors.RuleMatchesNoChannel(
                f"rule {rule.phenomenon!r} ({rule.band}/{rule.sensor}/{rule.axis}) matches no channel"
            )
        for ch, i in matched:
            if centroid_raw[i] > rule.threshold:
                tags.add((rule.phenomenon, ch.sensor))
    return StateLabel(cluster_id, frozenset(tags))


class StateTimeline:
    """Per-window cluster assignment plus a label for every cluster id."""

    __slots__ = ("windows", "labels")

    def __init__(self, windows: Sequence[tuple], labels: Mapping[int, StateLabel]):
        windows = tuple((s, e, int(c)) for s, e, c in windows)
        for s, e, _ in windows:
            if not s < e:
                raise errors.ConfigError(f"window must satisfy start < end, got ({s}, {e})")
        for (_, e0, _), (s1, _, _) in zip(windows, windows[1:]):
            if s1 < e0:
                raise errors.ConfigError("windows must be sorted and non-overlapping")
        labels = dict(labels)
        for _, _, cid in windows:
            if cid not in labels:
                raise errors.MissingLabel(f"cluster {cid} has no label")
        self.windows = windows
        self.labels = labels

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def state_ids(self) -> list[int]:
        return sorted({cid for _, _, cid in self.windows})

    @property
    def total_span(self):
        return sum(e - s for s, e, _ in self.windows)

    def cluster_ids(self) -> np.ndarray:
        return np.array([cid for _, _, cid in self.windows], dtype=np.intp)

    def segments_for(self, cluster_id: int) -> TimeSegmentSet:
        """This state's occupancy as merged half-open segments."""
        segs = [(s, e) for s, e, cid in self.windows if cid == cluster_id]
        return TimeSegmentSet(tuple(segs)).merged()

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateTimeline):
            return NotImplemented
        return self.windows == other.windows and self.labels == other.labels


def build_timeline(
    window_bounds: Sequence[tuple],
    assignments: Sequence[int],
    labels: Mapping[int, StateLabel],
) -> StateTimeline:
    """Assemble the timeline from per-window bounds and cluster assignments."""
    if len(window_bounds) != len(assignments):
        raise errors.ShapeMismatch("one assignment per window required")
    windows = [(s, e, int(c)) for (s, e), c in zip(window_bounds, assignments)]
    return StateTimeline(windows, labels)


def threshold_baseline(
    rows: Sequence[WindowFeatures],
    rules: Sequence[ThresholdRule],
    layout: FeatureLayout,
) -> StateTimeline:
    """Expert-style baseline: threshold each window's own raw features.

    Distinct tag sets become synthetic states, numbered by first appearance.
    """
    state_of_tags: dict[frozenset, int] = {}
    labels: dict[int, StateLabel] = {}
    windows = []
    for row in rows:
        tags = label_cluster(row.vector, rules, layout).tags
        if tags not in state_of_tags:
            cid = len(state_of_tags)
            state_of_tags[tags] = cid
            labels[cid] = StateLabel(cid, tags)
        windows.append((row.window_start, row.window_end, state_of_tags[tags]))
    return StateTimeline(windows, labels)


def tag_jaccard(a: StateTimeline, b: StateTimeline) -> float:
    """Mean per-window Jaccard similarity of tag sets between two timelines.

    Windows must coincide; two empty tag sets count as similarity 1.
    """
    if len(a) != len(b):
        raise errors.ShapeMismatch("timelines cover different window counts")
    total = 0.0
    for (s0, e0, c0), (s1, e1, c1) in zip(a.windows, b.windows):
        if (s0, e0) != (s1, e1):
            raise errors.ShapeMismatch(f"window mismatch: ({s0}, {e0}) vs ({s1}, {e1})")
        t0, t1 = a.labels[c0].tags, b.labels[c1].tags
        union = t0 | t1
        total += 1.0 if not union else len(t0 & t1) / len(union)
    return total / len(a) if len(a) else 1.0


# --- timeline I/O ---------------------------------------------------------------

def write_timeline_csv(path, timeline: StateTimeline) -> None:
    """``window_start,window_end,cluster_id,tags`` with ``;``-joined tags."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("window_start,window_end,cluster_id,tags\n")
        for s, e, cid in timeline.windows:
            fh.write(f"{fmt_number(s)},{fmt_number(e)},{cid},{timeline.labels[cid].tag_text()}\n")


def read_timeline_csv(path) -> StateTimeline:
    windows = []
    labels: dict[int, StateLabel] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["window_start", "window_end", "cluster_id", "tags"]:
            raise errors.MalformedRow(f"{path}: unexpected timeline header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                s, e, cid = parse_number(row[0]), parse_number(row[1]), int(row[2])
                tag_text = row[3] if len(row) > 3 else ""
            except (ValueError, IndexError) as exc:
                raise errors.MalformedRow(f"{path}:{lineno}: bad timeline row") from exc
            label = StateLabel.from_tag_text(cid, tag_text)
            if cid in labels and labels[cid] != label:
                raise errors.MalformedRow(f"{path}:{lineno}: cluster {cid} has inconsistent tags")
            labels[cid] = label
            windows.append((s, e, cid))
    return StateTimeline(windows, labels)


def write_state_flag_csvs(directory, timeline: StateTimeline) -> list[Path]:
    """One plot-ready flags CSV per state: ``states/state_<id>.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for cid in timeline.state_ids:
        path = directory / f"state_{cid:02d}.csv"
        segs = timeline.segments_for(cid)
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write("start_gps,end_gps\n")
            for s, e in segs:
                fh.write(f"{fmt_number(s)},{fmt_number(e)}\n")
        written.append(path)
    return written
