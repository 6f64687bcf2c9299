"""Synthetic multi-sensor BLRMS scenarios with ground-truth phenomenon tags.

Baseline trends are lognormal (positive, heavy-tailed, like real RMS data).
Injections elevate one physically motivated band:

* earthquake — transient rise/plateau/decay bump, always site-wide;
* microseism — slow multiplicative swell with gentle cosine ramps;
* anthropogenic — diurnal square-wave elevation on the configured sensors.

Every random draw flows from per-channel sub-seeds of the scenario seed, so
regeneration is bit-identical and independent of generation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import errors
from ._util import derive_seed
from .evaluation import Event
from .timeseries import (
    ANTHROPOGENIC_BAND,
    AXES,
    Band,
    ChannelBatch,
    ChannelId,
    ChannelSeries,
    EARTHQUAKE_BAND,
    MICROSEISM_BAND,
    TimeSegmentSet,
)

PHENOMENON_BANDS: dict[str, Band] = {
    "earthquake": EARTHQUAKE_BAND,
    "high_microseism": MICROSEISM_BAND,
    "high_anthropogenic": ANTHROPOGENIC_BAND,
}

_DAY_S = 86400
_DIURNAL_ON = (6 * 3600, 18 * 3600)  # daily ON window, seconds into each scenario day
_RAMP_FRAC = 0.05


@dataclass(frozen=True)
class Injection:
    phenomenon: str
    start_s: int
    duration_s: int
    amplitude: float
    sensors: tuple[str, ...] | str = "*"

    def __post_init__(self):
        if self.phenomenon not in PHENOMENON_BANDS:
            raise errors.InvalidSpec(
                f"unknown phenomenon {self.phenomenon!r}; known: {sorted(PHENOMENON_BANDS)}"
            )
        if self.duration_s <= 0 or self.start_s < 0:
            raise errors.InvalidSpec(f"injection interval [{self.start_s}, +{self.duration_s}) invalid")
        if self.amplitude <= 0:
            raise errors.InvalidSpec(f"amplitude must be positive, got {self.amplitude}")

    @property
    def band(self) -> Band:
        return PHENOMENON_BANDS[self.phenomenon]


@dataclass(frozen=True)
class EventModel:
    background_rate_hz: float
    multipliers: dict = field(default_factory=dict)
    kind: str = "glitch"

    def __post_init__(self):
        if self.background_rate_hz < 0:
            raise errors.InvalidSpec("background rate must be non-negative")
        for phenom, mult in self.multipliers.items():
            if phenom not in PHENOMENON_BANDS:
                raise errors.InvalidSpec(f"multiplier for unknown phenomenon {phenom!r}")
            if mult < 0:
                raise errors.InvalidSpec(f"rate multiplier must be non-negative, got {mult}")


@dataclass(frozen=True)
class ScenarioSpec:
    duration_s: int
    sensors: tuple[str, ...]
    rng_seed: int
    injections: tuple[Injection, ...] = ()
    start_gps: int = 1_000_000_000
    dt_s: int = 1
    window_s: int = 60
    axes: tuple[str, ...] = AXES
    baseline_median: float = 1.0
    baseline_sigma_log10: float = 0.1
    observing: tuple[tuple[int, int], ...] | None = None
    event_model: EventModel | None = None

    def __post_init__(self):
        if self.duration_s < self.window_s or self.duration_s % self.dt_s:
            raise errors.InvalidSpec("duration must cover a window and divide by dt_s")
        if not self.sensors:
            raise errors.InvalidSpec("need at least one sensor")
        if not self.axes or any(a not in AXES for a in self.axes):
            raise errors.InvalidSpec(f"axes must be drawn from {AXES}, got {self.axes}")
        if self.dt_s < 1 or self.window_s < 2 * self.dt_s:
            raise errors.InvalidSpec("window must hold at least two samples")
        if self.baseline_median <= 0 or self.baseline_sigma_log10 < 0:
            raise errors.InvalidSpec("baseline must have positive median and non-negative spread")
        for inj in self.injections:
            if inj.start_s + inj.duration_s > self.duration_s:
                raise errors.InvalidSpec(
                    f"injection [{inj.start_s}, {inj.start_s + inj.duration_s}) exceeds duration"
                )
            if inj.sensors != "*":
                unknown = set(inj.sensors) - set(self.sensors)
                if unknown:
                    raise errors.InvalidSpec(f"injection names unknown sensors {sorted(unknown)}")

    @staticmethod
    def from_json(obj: dict) -> "ScenarioSpec":
        try:
            injections = tuple(
                Injection(
                    phenomenon=i["phenomenon"],
                    start_s=int(i["start_s"]),
                    duration_s=int(i["duration_s"]),
                    amplitude=float(i["amplitude"]),
                    sensors="*" if i.get("sensors", "*") == "*" else tuple(i["sensors"]),
                )
                for i in obj.get("injections", [])
            )
            event_model = None
            if obj.get("event_model"):
                em = obj["event_model"]
                event_model = EventModel(
                    background_rate_hz=float(em["background_rate_hz"]),
                    multipliers={k: float(v) for k, v in em.get("multipliers", {}).items()},
                    kind=em.get("kind", "glitch"),
                )
            baseline = obj.get("baseline", {})
            observing = obj.get("observing")
            return ScenarioSpec(
                duration_s=int(obj["duration_s"]),
                sensors=tuple(obj["sensors"]),
                rng_seed=int(obj["rng_seed"]),
                injections=injections,
                start_gps=int(obj.get("start_gps", 1_000_000_000)),
                dt_s=int(obj.get("dt_s", 1)),
                window_s=int(obj.get("window_s", 60)),
                axes=tuple(obj.get("axes", AXES)),
                baseline_median=float(baseline.get("median_nm_s", 1.0)),
                baseline_sigma_log10=float(baseline.get("sigma_log10", 0.1)),
                observing=tuple((int(s), int(e)) for s, e in observing) if observing else None,
                event_model=event_model,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise errors.InvalidSpec(f"bad scenario spec: {exc}") from exc

    @staticmethod
    def load(path) -> "ScenarioSpec":
        with open(path, encoding="utf-8") as fh:
            return ScenarioSpec.from_json(json.load(fh))


@dataclass(frozen=True)
class GroundTruth:
    """True per-window tag sets plus the generating annotation of each event."""

    windows: tuple[tuple[int, int], ...]
    tags: tuple[frozenset, ...]

    def partition_labels(self) -> np.ndarray:
        """Distinct tag sets as integer ids (by first appearance), for ARI."""
        seen: dict[frozenset, int] = {}
        out = []
        for t in self.tags:
            if t not in seen:
                seen[t] = len(seen)
            out.append(seen[t])
        return np.array(out, dtype=np.intp)

    def tag_text(self, i: int) -> str:
        return ";".join(f"{p}@{s}" for p, s in sorted(self.tags[i]))


def effective_intervals(inj: Injection) -> list[tuple[int, int]]:
    """Scenario-relative intervals where the injection actually elevates data.

    Earthquake and microseism injections are single intervals; anthropogenic
    injections expand into their diurnal ON windows.
    """
    start, end = inj.start_s, inj.start_s + inj.duration_s
    if inj.phenomenon != "high_anthropogenic":
        return [(start, end)]
    out = []
    on0, on1 = _DIURNAL_ON
    for day in range(start // _DAY_S, end // _DAY_S + 1):
        s = max(start, day * _DAY_S + on0)
        e = min(end, day * _DAY_S + on1)
        if s < e:
            out.append((s, e))
    return out


def _envelope_shape(n: int, ramp_frac: float) -> np.ndarray:
    """0..1 rise / plateau / decay with cosine ramps over n samples."""
    shape = np.ones(n)
    ramp = max(1, int(round(n * ramp_frac)))
    if 2 * ramp >= n:
        ramp = n // 2
    if ramp > 0:
        up = 0.5 * (1 - np.cos(np.pi * (np.arange(ramp) + 0.5) / ramp))
        shape[:ramp] = up
        shape[n - ramp :] = up[::-1]
    return shape


def _affects(inj: Injection, sensor: str) -> bool:
    if inj.phenomenon == "earthquake":
        return True  # teleseismic: the whole site moves
    return inj.sensors == "*" or sensor in inj.sensors


def scenario_channels(spec: ScenarioSpec) -> list[ChannelId]:
    """Fixed channel ordering: sensor-major, then axis, then band."""
    return [
        ChannelId(sensor, axis, band)
        for sensor in spec.sensors
        for axis in spec.axes
        for band in (EARTHQUAKE_BAND, MICROSEISM_BAND, ANTHROPOGENIC_BAND)
    ]


def _channel_values(spec: ScenarioSpec, index: int, channel: ChannelId) -> np.ndarray:
    n = spec.duration_s // spec.dt_s
    rng = np.random.default_rng(derive_seed(spec.rng_seed, "channel", index))
    values = spec.baseline_median * np.power(10.0, rng.normal(0.0, spec.baseline_sigma_log10, n))
    env = np.ones(n)
    for inj in spec.injections:
        if inj.band != channel.band or not _affects(inj, channel.sensor):
            continue
        square = inj.phenomenon == "high_anthropogenic"
        for s, e in effective_intervals(inj):
            i0, i1 = s // spec.dt_s, e // spec.dt_s
            if i1 <= i0:
                continue
            shape = np.ones(i1 - i0) if square else _envelope_shape(i1 - i0, _RAMP_FRAC)
            np.maximum(env[i0:i1], 1.0 + (inj.amplitude - 1.0) * shape, out=env[i0:i1])
    return values * env


def _ground_truth(spec: ScenarioSpec) -> GroundTruth:
    n_win = spec.duration_s // spec.window_s
    windows = tuple(
        (spec.start_gps + i * spec.window_s, spec.start_gps + (i + 1) * spec.window_s)
        for i in range(n_win)
    )
    tag_sets: list[set] = [set() for _ in range(n_win)]
    for inj in spec.injections:
        sensors = spec.sensors if (inj.sensors == "*" or inj.phenomenon == "earthquake") else inj.sensors
        covered = TimeSegmentSet.from_unsorted(effective_intervals(inj)).merged()
        for i in range(n_win):
            w0, w1 = i * spec.window_s, (i + 1) * spec.window_s
            overlap = sum(max(0, min(e, w1) - max(s, w0)) for s, e in covered)
            if overlap * 2 >= spec.window_s:
                for sensor in sensors:
                    tag_sets[i].add((inj.phenomenon, sensor))
    return GroundTruth(windows, tuple(frozenset(t) for t in tag_sets))


def _phenomenon_activity(spec: ScenarioSpec) -> dict[str, np.ndarray]:
    """Per-phenomenon boolean activity on the 1 s grid (sensor-independent)."""
    active: dict[str, np.ndarray] = {}
    for inj in spec.injections:
        mask = active.setdefault(inj.phenomenon, np.zeros(spec.duration_s, dtype=bool))
        for s, e in effective_intervals(inj):
            mask[s:e] = True
    return active


def _draw_events(spec: ScenarioSpec) -> list[Event]:
    model = spec.event_model
    assert model is not None
    rate = np.full(spec.duration_s, model.background_rate_hz)
    for phenom, mask in _phenomenon_activity(spec).items():
        rate[mask] *= model.multipliers.get(phenom, 1.0)
    # Sample piecewise-constant runs of the rate function.
    changes = np.flatnonzero(np.diff(rate)) + 1
    bounds = np.concatenate(([0], changes, [spec.duration_s]))
    rng = np.random.default_rng(derive_seed(spec.rng_seed, "events"))
    activity = _phenomenon_activity(spec)
    events: list[Event] = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        lam = rate[lo] * (hi - lo)
        count = int(rng.poisson(lam)) if lam > 0 else 0
        times = np.sort(rng.uniform(lo, hi, count))
        for t in times:
            sec = min(int(t), spec.duration_s - 1)
            tags = sorted(p for p, mask in activity.items() if mask[sec])
            label = "+".join(tags) if tags else "background"
            snr = float(np.power(10.0, rng.normal(1.0, 0.25)))
            events.append(Event(spec.start_gps + float(t), model.kind, snr, label))
    events.sort(key=lambda e: e.time)
    return events


def generate(spec: ScenarioSpec) -> tuple[ChannelBatch, GroundTruth, list[Event] | None]:
    """Deterministically realize a scenario: aligned batch, truth, optional catalog."""
    channels = scenario_channels(spec)
    series = [
        ChannelSeries(ch, spec.start_gps, Fraction(spec.dt_s), _channel_values(spec, i, ch))
        for i, ch in enumerate(channels)
    ]
    truth = _ground_truth(spec)
    events = _draw_events(spec) if spec.event_model is not None else None
    return ChannelBatch(series), truth, events


def observing_flags(spec: ScenarioSpec) -> TimeSegmentSet:
    """Observing-mode segments in absolute GPS; defaults to the full span."""
    rel = spec.observing if spec.observing is not None else ((0, spec.duration_s),)
    return TimeSegmentSet.from_unsorted(
        (spec.start_gps + s, spec.start_gps + e) for s, e in rel
    )


def write_ground_truth_csv(path, truth: GroundTruth) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("window_start,window_end,tags\n")
        for i, (s, e) in enumerate(truth.windows):
            fh.write(f"{s},{e},{truth.tag_text(i)}\n")


def read_ground_truth_csv(path) -> GroundTruth:
    import csv as _csv

    windows = []
    tags = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != ["window_start", "window_end", "tags"]:
            raise errors.MalformedRow(f"{path}: unexpected ground truth header")
        for row in reader:
            if not row:
                continue
            windows.append((int(row[0]), int(row[1])))
            text = row[2] if len(row) > 2 else ""
            tag_set = set()
            if text:
                for token in text.split(";"):
                    phenom, _, sensor = token.partition("@")
                    tag_set.add((phenom, sensor))
            tags.append(frozenset(tag_set))
    return GroundTruth(tuple(windows), tuple(tags))
