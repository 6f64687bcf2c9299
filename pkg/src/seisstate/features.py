"""Non-overlapping windowing and per-window statistical feature vectors.

A window's feature vector is channel-major: all features of channel 0, then
channel 1, and so on, with features in the order listed by the spec.  The
layout is deterministic, so identical inputs give bit-identical vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import errors
from .timeseries import ChannelBatch, ChannelId, parse_channel_id
from ._util import fmt_number

# Registry of per-channel features: name -> reduction over a (C, W) slice
# returning one value per channel.  Population statistics throughout.
FEATURES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "mean": lambda w: w.mean(axis=1),
    "std": lambda w: w.std(axis=1),
}


def register_feature(name: str, fn: Callable[[np.ndarray], np.ndarray]) -> None:
    """Add a feature to the registry. ``fn`` maps (C, W) samples to (C,) values."""
    if name in FEATURES:
        raise errors.ConfigError(f"feature {name!r} already registered")
    FEATURES[name] = fn


@dataclass(frozen=True)
class WindowingConfig:
    window_s: int
    drop_partial: bool = True

    def __post_init__(self):
        if self.window_s < 1:
            raise errors.ConfigError(f"window_s must be a positive integer, got {self.window_s}")


@dataclass(frozen=True)
class FeatureSpec:
    names: tuple[str, ...] = ("mean", "std")

    def __post_init__(self):
        if not self.names:
            raise errors.ConfigError("feature spec must list at least one feature")
        if len(set(self.names)) != len(self.names):
            raise errors.ConfigError(f"duplicate feature in {self.names}")
        for name in self.names:
            if name not in FEATURES:
                raise errors.ConfigError(f"unknown feature {name!r}; known: {sorted(FEATURES)}")


@dataclass(frozen=True)
class Window:
    """One window's bounds plus its (C, W) sample slice."""

    start: int
    end: int
    samples: np.ndarray


@dataclass(frozen=True)
class WindowFeatures:
    window_start: int
    window_end: int
    vector: np.ndarray


class FeatureLayout:
    """Maps (channel, feature) pairs to feature-vector indices."""

    __slots__ = ("columns", "_index")

    def __init__(self, columns: Sequence[tuple[ChannelId, str]]):
        self.columns = tuple(columns)
        self._index = {(str(ch), feat): i for i, (ch, feat) in enumerate(self.columns)}

    def __len__(self) -> int:
        return len(self.columns)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureLayout):
            return NotImplemented
        return self.columns == other.columns

    def index_of(self, channel: ChannelId | str, feature: str) -> int:
        key = (str(channel), feature)
        if key not in self._index:
            raise errors.LayoutMismatch(f"no column for channel {key[0]!r} feature {feature!r}")
        return self._index[key]

    def column_names(self) -> list[str]:
        return [f"{ch}__{feat}" for ch, feat in self.columns]

    @property
    def channels(self) -> list[ChannelId]:
        seen: list[ChannelId] = []
        for ch, _ in self.columns:
            if ch not in seen:
                seen.append(ch)
        return seen

    @staticmethod
    def for_channels(channels: Sequence[ChannelId], spec: FeatureSpec) -> "FeatureLayout":
        return FeatureLayout([(ch, feat) for ch in channels for feat in spec.names])

    @staticmethod
    def from_column_names(names: Sequence[str]) -> "FeatureLayout":
        cols = []
        for name in names:
            channel_part, _, feat = name.rpartition("__")
            if not channel_part or not feat:
                raise errors.MalformedRow(f"bad feature column name {name!r}")
            cols.append((parse_channel_id(channel_part), feat))
        return FeatureLayout(cols)


def segment_windows(batch: ChannelBatch, cfg: WindowingConfig) -> list[Window]:
    """Tile the batch span into non-overlapping windows of ``window_s`` seconds."""
    per_window = Fraction(cfg.window_s) / batch.dt
    if per_window.denominator != 1:
        raise errors.ConfigError(f"dt {batch.dt} does not divide window_s {cfg.window_s}")
    w = int(per_window)
    if w < 2:
        raise errors.ConfigError(f"window_s {cfg.window_s} holds fewer than 2 samples at dt {batch.dt}")
    n_win = batch.n_samples // w
    if n_win < 1:
        raise errors.WindowTooLong(
            f"window {cfg.window_s} s exceeds batch span {batch.span_s} s"
        )
    matrix = batch.values_matrix()
    start = batch.start_time
    out = []
    for i in range(n_win):
        out.append(
            Window(
                start=start + i * cfg.window_s,
                end=start + (i + 1) * cfg.window_s,
                samples=matrix[:, i * w : (i + 1) * w],
            )
        )
    if not cfg.drop_partial and batch.n_samples % w != 0:
        # Trailing partial window keeps its true (shorter) bounds.
        out.append(Window(start=start + n_win * cfg.window_s, end=batch.end_time, samples=matrix[:, n_win * w :]))
    return out


def extract_features(window: Window, spec: FeatureSpec) -> WindowFeatures:
    """Per-channel statistics of one window, flattened channel-major."""
    if window.samples.shape[1] == 0:
        raise errors.EmptyWindow(f"window [{window.start}, {window.end}) has no samples")
    per_feature = [FEATURES[name](window.samples) for name in spec.names]
    vector = np.column_stack(per_feature).reshape(-1)
    return WindowFeatures(window.start, window.end, vector)


def windowed_features(
    batches: Sequence[ChannelBatch],
    wcfg: WindowingConfig,
    spec: FeatureSpec,
) -> tuple[list[WindowFeatures], FeatureLayout]:
    """Window every sub-batch and extract features, ordered by window start.

    All sub-batches must share one channel set (the usual output of masking a
    single aligned batch).  Sub-batches shorter than one window are skipped.
    """
    if not batches:
        raise errors.EmptyData("no batches to window")
    channels = batches[0].channel_ids
    for b in batches[1:]:
        if b.channel_ids != channels:
            raise errors.MixedSampleRate("sub-batches disagree on channel set")
    layout = FeatureLayout.for_channels(channels, spec)
    rows: list[WindowFeatures] = []
    for b in batches:
        try:
            windows = segment_windows(b, wcfg)
        except errors.WindowTooLong:
            continue
        rows.extend(extract_features(w, spec) for w in windows)
    if not rows:
        raise errors.WindowTooLong("no sub-batch spans a full window")
    rows.sort(key=lambda r: r.window_start)
    return rows, layout


# --- standardization ----------------------------------------------------------

class Standardizer:
    """Per-dimension affine transform, optionally in log10 space.

    ``apply`` maps raw feature vectors to zero-mean unit-variance coordinates
    (for the fitted rows); ``invert`` maps standardized points, e.g. cluster
    centroids, back to raw units.
    """

    __slots__ = ("shift", "scale", "log10")

    def __init__(self, shift, scale, log10: bool = False):
        shift = np.array(shift, dtype=np.float64)
        scale = np.array(scale, dtype=np.float64)
        if shift.shape != scale.shape or shift.ndim != 1:
            raise errors.DimensionMismatch("shift and scale must be 1-D arrays of equal length")
        if not (scale > 0).all():
            raise errors.ConfigError("scale entries must be positive")
        shift.setflags(write=False)
        scale.setflags(write=False)
        self.shift = shift
        self.scale = scale
        self.log10 = bool(log10)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Standardizer):
            return NotImplemented
        return (
            self.log10 == other.log10
            and np.array_equal(self.shift, other.shift)
            and np.array_equal(self.scale, other.scale)
        )

    @property
    def dim(self) -> int:
        return self.shift.size

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise errors.DimensionMismatch(f"expected dimension {self.dim}, got {x.shape[-1]}")
        return x

    def apply(self, x) -> np.ndarray:
        x = self._check(x)
        if self.log10:
            if not (x > 0).all():
                raise errors.NonPositiveForLog("log10 transform needs strictly positive values")
            x = np.log10(x)
        return (x - self.shift) / self.scale

    def invert(self, y) -> np.ndarray:
        y = self._check(y)
        x = y * self.scale + self.shift
        return np.power(10.0, x) if self.log10 else x

    def to_json(self) -> dict:
        return {
            "shift": [float(v) for v in self.shift],
            "scale": [float(v) for v in self.scale],
            "log_transform": self.log10,
        }

    @staticmethod
    def from_json(obj: dict) -> "Standardizer":
        return Standardizer(obj["shift"], obj["scale"], obj["log_transform"])

    @staticmethod
    def identity(dim: int) -> "Standardizer":
        return Standardizer(np.zeros(dim), np.ones(dim), False)


_DEGENERATE_STD = 1e-12


def fit_standardizer(rows: Sequence[WindowFeatures], log_transform: bool = False) -> Standardizer:
    """Fit per-dimension shift/scale (population statistics) to feature rows.

    Dimensions with standard deviation below 1e-12 keep scale 1 so constant
    features pass through unscaled.
    """
    if len(rows) < 2:
        raise errors.DegenerateInput(f"need at least 2 rows to fit, got {len(rows)}")
    matrix = np.stack([r.vector for r in rows])
    if log_transform:
        if not (matrix > 0).all():
            raise errors.NonPositiveForLog("log10 transform needs strictly positive features")
        matrix = np.log10(matrix)
    shift = matrix.mean(axis=0)
    scale = matrix.std(axis=0)
    scale = np.where(scale < _DEGENERATE_STD, 1.0, scale)
    return Standardizer(shift, scale, log_transform)


def feature_matrix(rows: Sequence[WindowFeatures]) -> np.ndarray:
    if not rows:
        raise errors.EmptyData("no feature rows")
    return np.stack([r.vector for r in rows])


# --- feature CSV ----------------------------------------------------------------

def write_features_csv(path, rows: Sequence[WindowFeatures], layout: FeatureLayout) -> None:
    """Header ``window_start,window_end,<channel>__<feature>,...``; raw units."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(["window_start", "window_end"] + layout.column_names()) + "\n")
        for r in rows:
            cells = [fmt_number(r.window_start), fmt_number(r.window_end)]
            cells += [fmt_number(float(v)) for v in r.vector]
            fh.write(",".join(cells) + "\n")


def read_features_csv(path) -> tuple[list[WindowFeatures], FeatureLayout]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise errors.EmptyFile(f"{path}: empty feature file")
        if header[:2] != ["window_start", "window_end"] or len(header) < 3:
            raise errors.MalformedRow(f"{path}: unexpected feature CSV header")
        layout = FeatureLayout.from_column_names(header[2:])
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise errors.MalformedRow(f"{path}:{lineno}: expected {len(header)} cells")
            try:
                start, end = int(row[0]), int(row[1])
                vector = np.array([float(c) for c in row[2:]], dtype=np.float64)
            except ValueError as exc:
                raise errors.MalformedRow(f"{path}:{lineno}: non-numeric cell") from exc
            rows.append(WindowFeatures(start, end, vector))
    if not rows:
        raise errors.EmptyFile(f"{path}: no feature rows")
    return rows, layout
