"""Domain types and file ingestion for uniformly sampled trend channel data.

GPS time is carried as integer seconds; sub-second sample times are derived
as ``start_time + index * dt`` with ``dt`` an exact :class:`~fractions.Fraction`,
so month-scale spans never accumulate float drift.  All intervals are
half-open ``[start, end)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import errors
from ._util import fmt_number, parallel_map, parse_number, parse_rational, rational_str

AXES = ("X", "Y", "Z")


@dataclass(frozen=True)
class Band:
    """A frequency band in Hz, identified by a canonical name."""

    low_hz: float
    high_hz: float
    name: str = ""

    def __post_init__(self):
        if not (0 < self.low_hz < self.high_hz):
            raise errors.InvalidSpec(
                f"band edges must satisfy 0 < low < high, got ({self.low_hz}, {self.high_hz})"
            )
        if not self.name:
            object.__setattr__(self, "name", f"band({self.low_hz!r},{self.high_hz!r})")

    def token(self) -> str:
        return self.name

    def to_json(self) -> object:
        if self in _NAMED_BANDS.values():
            return self.name
        return {"low_hz": self.low_hz, "high_hz": self.high_hz}


EARTHQUAKE_BAND = Band(0.03, 0.1, "earthquake")
MICROSEISM_BAND = Band(0.1, 0.3, "microseism")
ANTHROPOGENIC_BAND = Band(1.0, 3.0, "anthropogenic")

_NAMED_BANDS = {
    "earthquake": EARTHQUAKE_BAND,
    "microseism": MICROSEISM_BAND,
    "anthropogenic": ANTHROPOGENIC_BAND,
}


def band_from_token(token: str) -> Band:
    """Inverse of :meth:`Band.token`."""
    if token in _NAMED_BANDS:
        return _NAMED_BANDS[token]
    if token.startswith("band(") and token.endswith(")"):
        inner = token[len("band(") : -1]
        low, high = inner.split(",")
        return Band(float(low), float(high))
    raise errors.MalformedRow(f"unknown band token {token!r}")


def band_from_json(value: object) -> Band:
    """Band from a manifest entry: a known name or ``{"low_hz": f, "high_hz": f}``."""
    if isinstance(value, str):
        if value not in _NAMED_BANDS:
            raise errors.ConfigError(f"unknown band name {value!r}")
        return _NAMED_BANDS[value]
    if isinstance(value, dict):
        try:
            return Band(float(value["low_hz"]), float(value["high_hz"]))
        except KeyError as exc:
            raise errors.ConfigError(f"custom band needs low_hz/high_hz: {value!r}") from exc
    raise errors.ConfigError(f"cannot interpret band spec {value!r}")


@dataclass(frozen=True)
class ChannelId:
    """Identity of one trend channel: sensor location x axis x frequency band."""

    sensor: str
    axis: str
    band: Band

    def __post_init__(self):
        if not self.sensor or any(c in self.sensor for c in ":,"):
            raise errors.ConfigError(f"invalid sensor name {self.sensor!r}")
        if self.axis not in AXES:
            raise errors.ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")

    def __str__(self) -> str:
        return f"{self.sensor}:{self.axis}:{self.band.token()}"


def parse_channel_id(text: str) -> ChannelId:
    """Inverse of ``str(ChannelId)``."""
    parts = text.split(":", 2)
    if len(parts) != 3:
        raise errors.MalformedRow(f"cannot parse channel id {text!r}")
    sensor, axis, band_token = parts
    return ChannelId(sensor, axis, band_from_token(band_token))


class ChannelSeries:
    """Uniformly sampled series for one channel.

    Immutable after construction; ``values`` is a read-only float64 array.
    """

    __slots__ = ("id", "start_time", "dt", "values")

    def __init__(self, id: ChannelId, start_time: int, dt: Fraction | int, values):
        dt = Fraction(dt)
        if dt <= 0:
            raise errors.InvalidSpec(f"dt must be positive, got {dt}")
        start_time = _canonical_time(start_time)
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise errors.EmptyFile("series must hold at least one sample")
        if not np.isfinite(arr).all():
            raise errors.MalformedRow("series values must all be finite")
        arr.setflags(write=False)
        self.id = id
        self.start_time = start_time
        self.dt = dt
        self.values = arr

    def __len__(self) -> int:
        return self.values.size

    @property
    def end_time(self) -> Fraction | int:
        return _canonical_time(self.start_time + len(self) * self.dt)

    @property
    def span_s(self) -> Fraction | int:
        return _canonical_time(len(self) * self.dt)

    def time_of(self, index: int) -> Fraction | int:
        return _canonical_time(self.start_time + index * self.dt)

    def crop(self, i0: int, i1: int) -> "ChannelSeries":
        """New series over sample indices ``[i0, i1)``."""
        if not (0 <= i0 < i1 <= len(self)):
            raise errors.NoOverlap(f"empty crop [{i0}, {i1}) of {len(self)} samples")
        return ChannelSeries(self.id, self.time_of(i0), self.dt, self.values[i0:i1])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelSeries):
            return NotImplemented
        return (
            self.id == other.id
            and self.start_time == other.start_time
            and self.dt == other.dt
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return (
            f"ChannelSeries({self.id}, start={self.start_time}, "
            f"dt={rational_str(self.dt)}, n={len(self)})"
        )


def _canonical_time(t):
    """Collapse integral Fractions/floats to int so trend times stay exact ints."""
    if isinstance(t, Fraction):
        return int(t) if t.denominator == 1 else t
    if isinstance(t, float):
        return int(t) if t.is_integer() else t
    return t


@dataclass(frozen=True)
class TimeSegmentSet:
    """Sorted, non-overlapping half-open ``[start, end)`` segments in GPS seconds."""

    segments: tuple = ()

    def __post_init__(self):
        segs = tuple((s, e) for s, e in self.segments)
        for s, e in segs:
            if not s < e:
                raise errors.ConfigError(f"segment must satisfy start < end, got ({s}, {e})")
        for (s0, e0), (s1, e1) in zip(segs, segs[1:]):
            if s1 < e0:
                raise errors.ConfigError(f"segments overlap or are unsorted near ({s1}, {e1})")
        object.__setattr__(self, "segments", segs)

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def total_duration(self):
        return sum((e - s) for s, e in self.segments)

    def contains(self, t) -> bool:
        for s, e in self.segments:
            if s <= t < e:
                return True
            if s > t:
                break
        return False

    def count_in(self, times: np.ndarray) -> int:
        """Number of entries of a sorted-or-not array falling inside the set."""
        if not self.segments:
            return 0
        starts = np.array([s for s, _ in self.segments], dtype=np.float64)
        ends = np.array([e for _, e in self.segments], dtype=np.float64)
        t = np.asarray(times, dtype=np.float64)
        idx = np.searchsorted(starts, t, side="right") - 1
        ok = idx >= 0
        inside = np.zeros(t.shape, dtype=bool)
        inside[ok] = t[ok] < ends[idx[ok]]
        return int(inside.sum())

    def merged(self) -> "TimeSegmentSet":
        """Coalesce touching segments."""
        out: list[tuple] = []
        for s, e in self.segments:
            if out and out[-1][1] == s:
                out[-1] = (out[-1][0], e)
            else:
                out.append((s, e))
        return TimeSegmentSet(tuple(out))

    @staticmethod
    def from_unsorted(pairs: Iterable[tuple]) -> "TimeSegmentSet":
        return TimeSegmentSet(tuple(sorted(pairs)))


def read_flags_csv(path) -> TimeSegmentSet:
    """Flags CSV: header ``start_gps,end_gps``, one segment per row."""
    rows: list[tuple] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise errors.EmptyFile(f"{path}: empty flags file")
        if [h.strip() for h in header] != ["start_gps", "end_gps"]:
            raise errors.MalformedRow(f"{path}: expected header start_gps,end_gps")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((parse_number(row[0]), parse_number(row[1])))
            except (ValueError, IndexError) as exc:
                raise errors.MalformedRow(f"{path}:{lineno}: bad segment row {row!r}") from exc
    return TimeSegmentSet.from_unsorted(rows)


def write_flags_csv(path, flags: TimeSegmentSet) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("start_gps,end_gps\n")
        for s, e in flags:
            fh.write(f"{fmt_number(s)},{fmt_number(e)}\n")


class ChannelBatch:
    """A set of channel series aligned sample-for-sample."""

    __slots__ = ("channels",)

    def __init__(self, channels: Sequence[ChannelSeries]):
        channels = tuple(channels)
        if not channels:
            raise errors.EmptyData("batch needs at least one channel")
        first = channels[0]
        for ch in channels[1:]:
            if ch.dt != first.dt:
                raise errors.MixedSampleRate(f"{ch.id} has dt {ch.dt}, expected {first.dt}")
            if ch.start_time != first.start_time or len(ch) != len(first):
                raise errors.NonUniformSampling(f"{ch.id} is not aligned with {first.id}")
        self.channels = channels

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def start_time(self):
        return self.channels[0].start_time

    @property
    def end_time(self):
        return self.channels[0].end_time

    @property
    def dt(self) -> Fraction:
        return self.channels[0].dt

    @property
    def n_samples(self) -> int:
        return len(self.channels[0])

    @property
    def span_s(self):
        return self.channels[0].span_s

    @property
    def channel_ids(self) -> list[ChannelId]:
        return [ch.id for ch in self.channels]

    def values_matrix(self) -> np.ndarray:
        """(C, N) copy of all channel values."""
        return np.stack([ch.values for ch in self.channels])

    def crop(self, i0: int, i1: int) -> "ChannelBatch":
        return ChannelBatch([ch.crop(i0, i1) for ch in self.channels])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelBatch):
            return NotImplemented
        return self.channels == other.channels


# --- trend file I/O ----------------------------------------------------------

_TREND_HEADER = ["gps_time", "value"]


def load_trend_file(path, id: ChannelId, dt: Fraction | int = 1) -> ChannelSeries:
    """Load one trend CSV (header ``gps_time,value``) into a contiguous series.

    Rows are sorted by time; any gap different from ``dt`` raises
    :class:`~seisstate.errors.NonUniformSampling` (gaps are never imputed; use
    :func:`load_trend_file_segments` to split a gapped export instead).
    """
    segments = _load_trend_segments(path, id, Fraction(dt), split_on_gaps=False)
    return segments[0]


def load_trend_file_segments(path, id: ChannelId, dt: Fraction | int = 1) -> list[ChannelSeries]:
    """Like :func:`load_trend_file` but splits at sampling gaps."""
    return _load_trend_segments(path, id, Fraction(dt), split_on_gaps=True)


def _load_trend_segments(path, id, dt: Fraction, split_on_gaps: bool) -> list[ChannelSeries]:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise errors.EmptyFile(f"{path}: no data") from exc
    if list(df.columns) != _TREND_HEADER:
        raise errors.MalformedRow(f"{path}: expected header gps_time,value")
    if len(df) == 0:
        raise errors.EmptyFile(f"{path}: header only")

    values = pd.to_numeric(df["value"], errors="coerce").to_numpy(np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise errors.MalformedRow(f"{path}: non-finite or non-numeric value {df['value'].iloc[i]!r} (row {i + 2})")

    if dt.denominator == 1:
        times = pd.to_numeric(df["gps_time"], errors="coerce").to_numpy(np.float64)
        if not np.isfinite(times).all():
            i = int(np.flatnonzero(~np.isfinite(times))[0])
            raise errors.MalformedRow(f"{path}: bad timestamp {df['gps_time'].iloc[i]!r} (row {i + 2})")
        if not (times == np.floor(times)).all():
            raise errors.MalformedRow(f"{path}: integer-dt file has fractional timestamps")
        order = np.argsort(times, kind="stable")
        times = times[order].astype(np.int64)
        values = values[order]
        gaps = np.diff(times)
        if (gaps == 0).any():
            t = int(times[int(np.flatnonzero(gaps == 0)[0])])
            raise errors.MalformedRow(f"{path}: duplicate timestamp {t}")
        step = int(dt)
        breaks = np.flatnonzero(gaps != step)
        starts = [int(t) for t in times[np.concatenate(([0], breaks + 1))]] if len(times) else []
        bounds = np.concatenate(([0], breaks + 1, [len(times)]))
    else:
        # Exact-arithmetic path for sub-second sampling; raw traces are short.
        times_fr = []
        for i, text in enumerate(df["gps_time"]):
            try:
                times_fr.append(Fraction(text.strip()))
            except (ValueError, ZeroDivisionError) as exc:
                raise errors.MalformedRow(f"{path}: bad timestamp {text!r} (row {i + 2})") from exc
        order = sorted(range(len(times_fr)), key=lambda i: times_fr[i])
        times_fr = [times_fr[i] for i in order]
        values = values[np.array(order)]
        for i in range(len(times_fr) - 1):
            if times_fr[i + 1] == times_fr[i]:
                raise errors.MalformedRow(f"{path}: duplicate timestamp {times_fr[i]}")
        breaks = [i for i in range(len(times_fr) - 1) if times_fr[i + 1] - times_fr[i] != dt]
        bounds = np.array([0] + [b + 1 for b in breaks] + [len(times_fr)])
        starts = []
        for b in bounds[:-1]:
            t0 = times_fr[int(b)]
            if t0.denominator != 1:
                raise errors.MalformedRow(f"{path}: series must start on an integer GPS second, got {t0}")
            starts.append(int(t0))

    if len(starts) > 1 and not split_on_gaps:
        raise errors.NonUniformSampling(
            f"{path}: {len(starts) - 1} sampling gap(s) found; expected uniform dt={rational_str(dt)}"
        )
    return [
        ChannelSeries(id, starts[i], dt, values[bounds[i] : bounds[i + 1]])
        for i in range(len(starts))
    ]


def write_trend_file(path, series: ChannelSeries) -> None:
    """Write a series in the trend CSV format. Values round-trip bit-exactly."""
    n = len(series)
    if series.dt.denominator == 1:
        times = np.asarray(series.start_time, dtype=np.int64) + np.arange(n, dtype=np.int64) * int(series.dt)
        df = pd.DataFrame({"gps_time": times, "value": series.values})
    else:
        times = [_decimal_str(series.start_time + i * series.dt) for i in range(n)]
        df = pd.DataFrame({"gps_time": times, "value": series.values})
    df.to_csv(path, index=False, lineterminator="\n")


def _decimal_str(fr: Fraction) -> str:
    """Exact decimal form; only defined for denominators of the form 2^a * 5^b."""
    den = fr.denominator
    a = b = 0
    while den % 2 == 0:
        den //= 2
        a += 1
    while den % 5 == 0:
        den //= 5
        b += 1
    if den != 1:
        raise errors.ConfigError(f"sample time {fr} has no exact decimal form")
    shift = max(a, b)
    scaled = fr * 10**shift
    digits = str(scaled.numerator)
    if shift == 0:
        return digits
    sign = "-" if digits.startswith("-") else ""
    digits = digits.lstrip("-").rjust(shift + 1, "0")
    return f"{sign}{digits[:-shift]}.{digits[-shift:]}"


# --- batch operations --------------------------------------------------------

def align_batch(series_list: Sequence[ChannelSeries]) -> ChannelBatch:
    """Restrict all series to their maximal common time span.

    Idempotent: aligning an already aligned batch's channels returns an
    equal batch.
    """
    if not series_list:
        raise errors.EmptyData("align_batch needs at least one series")
    dt = series_list[0].dt
    for s in series_list[1:]:
        if s.dt != dt:
            raise errors.MixedSampleRate(f"{s.id} has dt {s.dt}, expected {dt}")
    start = max(s.start_time for s in series_list)
    end = min(s.end_time for s in series_list)
    if not start < end:
        raise errors.NoOverlap("series spans do not intersect")
    cropped = []
    for s in series_list:
        offset = Fraction(start - s.start_time) / dt
        if offset.denominator != 1:
            raise errors.NonUniformSampling(f"{s.id} sample grid is phase-shifted from the batch grid")
        i0 = int(offset)
        i1 = i0 + int(Fraction(end - start) / dt)
        cropped.append(s.crop(i0, i1))
    return ChannelBatch(cropped)


def mask_to_segments(batch: ChannelBatch, flags: TimeSegmentSet) -> list[ChannelBatch]:
    """Split a batch into sub-batches covering its intersection with ``flags``.

    Samples outside the flagged segments are discarded, never interpolated.
    A sample at time ``t`` belongs to a segment when ``start <= t < end``.
    """
    out: list[ChannelBatch] = []
    start, dt, n = batch.start_time, batch.dt, batch.n_samples
    for seg_start, seg_end in flags:
        i0 = max(0, _ceil_div(Fraction(seg_start - start), dt))
        i1 = min(n, _ceil_div(Fraction(seg_end - start), dt))
        if i1 > i0:
            out.append(batch.crop(i0, i1))
    return out


def _ceil_div(num: Fraction, den: Fraction) -> int:
    q = num / den
    return int(math.ceil(q)) if q.denominator != 1 else int(q)


# --- channel manifest --------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    channel: ChannelId
    dt: Fraction = field(default_factory=lambda: Fraction(1))


def load_manifest(path) -> list[ManifestEntry]:
    """Channel manifest JSON; file paths are resolved relative to the manifest."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise errors.ConfigError(f"{path}: manifest must be a non-empty JSON array")
    entries = []
    for i, item in enumerate(raw):
        try:
            channel = ChannelId(item["sensor"], item["axis"], band_from_json(item["band"]))
            file_path = (path.parent / item["file"]).resolve()
            dt = parse_rational(item.get("dt_s", "1"))
        except (KeyError, TypeError) as exc:
            raise errors.ConfigError(f"{path}: bad manifest entry #{i}: {item!r}") from exc
        entries.append(ManifestEntry(file_path, channel, dt))
    return entries


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    path = Path(path)
    items = []
    for e in entries:
        item = {
            "file": str(Path(e.path).name),
            "sensor": e.channel.sensor,
            "axis": e.channel.axis,
            "band": e.channel.band.to_json(),
        }
        if e.dt != 1:
            item["dt_s"] = rational_str(e.dt)
        items.append(item)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(items, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_channels(entries: Sequence[ManifestEntry], threads: int = 1) -> list[ChannelSeries]:
    """Load every manifest entry (optionally in parallel; order preserved)."""
    return parallel_map(lambda e: load_trend_file(e.path, e.channel, e.dt), list(entries), threads)
