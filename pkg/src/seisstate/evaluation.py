"""Correlate discovered states with glitch / lock-loss event catalogs.

The null model is a homogeneous Poisson process over the analyzed (windowed)
span only: an event is expected in a state in proportion to the state's share
of that span.  Events outside every window are excluded from the rates and
reported in the footer.  Segment membership uses half-open intervals: an
event at a segment start is inside, at its end outside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb, sqrt
from typing import Sequence

import numpy as np
from scipy.stats import poisson

from . import errors
from ._util import fmt_number
from .labeling import StateTimeline
from .timeseries import TimeSegmentSet

KINDS = ("glitch", "lockloss")


@dataclass(frozen=True)
class Event:
    """One catalog event; ``snr`` and ``label`` are optional catalog columns."""

    time: float
    kind: str = "glitch"
    snr: float | None = None
    label: str | None = None

    def __post_init__(self):
        if not np.isfinite(self.time):
            raise errors.MalformedRow(f"event time must be finite, got {self.time}")
        if self.snr is not None and (not np.isfinite(self.snr) or self.snr < 0):
            raise errors.MalformedRow(f"snr must be a non-negative number, got {self.snr}")


def load_catalog(path, kind: str = "glitch", snr_min: float | None = None) -> list[Event]:
    """Load an event catalog CSV (header ``gps_time,snr,label``), sorted by time.

    With ``snr_min`` given, only rows with ``snr`` strictly greater than the
    cut survive; rows with no recorded snr are dropped since the cut cannot
    be established for them.
    """
    events: list[Event] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise errors.EmptyFile(f"{path}: empty catalog")
        if [h.strip() for h in header] != ["gps_time", "snr", "label"]:
            raise errors.MalformedRow(f"{path}: expected header gps_time,snr,label")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                time = float(row[0])
                snr = float(row[1]) if len(row) > 1 and row[1].strip() else None
            except ValueError as exc:
                raise errors.MalformedRow(f"{path}:{lineno}: bad event row {row!r}") from exc
            label = row[2].strip() if len(row) > 2 and row[2].strip() else None
            if snr_min is not None and (snr is None or not snr > snr_min):
                continue
            events.append(Event(time, kind, snr, label))
    events.sort(key=lambda e: e.time)
    return events


def write_catalog_csv(path, events: Sequence[Event]) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("gps_time,snr,label\n")
        for e in sorted(events, key=lambda e: e.time):
            snr = fmt_number(e.snr) if e.snr is not None else ""
            fh.write(f"{fmt_number(e.time)},{snr},{e.label or ''}\n")


@dataclass(frozen=True)
class RateRow:
    """Observed vs expected event counts for one state."""

    state: int
    duration_s: float
    observed: int
    expected: float
    observed_rate_hz: float
    expected_rate_hz: float
    excess_ratio: float | None
    poisson_z: float | None
    p_value: float | None = None


@dataclass(frozen=True)
class RateReport:
    rows: tuple[RateRow, ...]
    total_events: int
    in_span: int
    out_of_span: int
    kind: str = "glitch"

    def row_for(self, state: int) -> RateRow:
        for row in self.rows:
            if row.state == state:
                return row
        raise KeyError(f"no state {state} in report")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "states": [
                {
                    "state": r.state,
                    "duration_s": r.duration_s,
                    "observed": r.observed,
                    "expected": r.expected,
                    "observed_rate_hz": r.observed_rate_hz,
                    "expected_rate_hz": r.expected_rate_hz,
                    "excess_ratio": r.excess_ratio,
                    "poisson_z": r.poisson_z,
                    "p_value": r.p_value,
                }
                for r in self.rows
            ],
            "footer": {
                "total_events": self.total_events,
                "in_span": self.in_span,
                "out_of_span": self.out_of_span,
            },
        }


def write_rates_csv(path, report: RateReport) -> None:
    """Plot-ready summary: ``state,duration_s,observed,expected,excess,z``."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("state,duration_s,observed,expected,excess,z\n")
        for r in report.rows:
            excess = fmt_number(r.excess_ratio) if r.excess_ratio is not None else ""
            z = fmt_number(r.poisson_z) if r.poisson_z is not None else ""
            fh.write(
                f"{r.state},{fmt_number(r.duration_s)},{r.observed},"
                f"{fmt_number(r.expected)},{excess},{z}\n"
            )


def correlate(timeline: StateTimeline, events: Sequence[Event], p_values: bool = False) -> RateReport:
    """Per-state observed vs expected counts under the uniform-occurrence null."""
    if len(timeline) == 0:
        raise errors.EmptyTimeline("cannot correlate against an empty timeline")
    times = np.array([e.time for e in events], dtype=np.float64)
    analyzed = TimeSegmentSet(tuple((s, e) for s, e, _ in timeline.windows)).merged()
    total_span = float(timeline.total_span)
    in_span = analyzed.count_in(times) if len(times) else 0

    kind = events[0].kind if events else "glitch"
    rows = []
    for state in timeline.state_ids:
        segs = timeline.segments_for(state)
        duration = float(segs.total_duration)
        observed = segs.count_in(times) if len(times) else 0
        expected = in_span * duration / total_span
        excess = observed / expected if expected > 0 else None
        z = (observed - expected) / sqrt(expected) if expected > 0 else None
        pv = float(poisson.sf(observed - 1, expected)) if p_values and expected > 0 else None
        rows.append(
            RateRow(
                state=state,
                duration_s=duration,
                observed=observed,
                expected=expected,
                observed_rate_hz=observed / duration,
                expected_rate_hz=expected / duration,
                excess_ratio=excess,
                poisson_z=z,
                p_value=pv,
            )
        )
    return RateReport(
        rows=tuple(rows),
        total_events=len(events),
        in_span=in_span,
        out_of_span=len(events) - in_span,
        kind=kind,
    )


def max_excess_z(timeline: StateTimeline, events: Sequence[Event]) -> float:
    """Largest per-state Poisson z-score; the external k-selection statistic."""
    report = correlate(timeline, events)
    scores = [r.poisson_z for r in report.rows if r.poisson_z is not None]
    return max(scores) if scores else float("-inf")


def split_by_label(events: Sequence[Event]) -> dict[str, list[Event]]:
    """Group events by their catalog label (unlabeled rows under ``""``)."""
    out: dict[str, list[Event]] = {}
    for e in events:
        out.setdefault(e.label or "", []).append(e)
    return out


def adjusted_rand_index(labels_a: Sequence[int], labels_b: Sequence[int]) -> float:
    """Chance-corrected agreement between two partitions of the same items."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise errors.ShapeMismatch("partitions must be equal-length 1-D label arrays")
    n = a.size
    if n == 0:
        raise errors.EmptyData("cannot compare empty partitions")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    sum_cells = sum(comb(int(v), 2) for v in table.reshape(-1))
    sum_rows = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_cols = sum(comb(int(v), 2) for v in table.sum(axis=0))
    pairs = comb(n, 2)
    expected = sum_rows * sum_cols / pairs if pairs else 0.0
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
