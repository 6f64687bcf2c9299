"""Band-limited RMS trend construction: bandpass filtering plus segment RMS.

The bandpass is a Butterworth cascade in second-order sections applied
forward-backward (zero phase), so the effective attenuation is the squared
single-pass magnitude.  Zero-phase filtering preserves event timing at the
cost of approximate parity with causally produced site trends.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from . import errors
from .timeseries import Band, ChannelId, ChannelSeries


@dataclass(frozen=True)
class BandpassSpec:
    """Design parameters for one bandpass: edges in Hz, per-pass order, sample rate."""

    low_hz: float
    high_hz: float
    order: int = 4
    fs_hz: float = 16.0

    def __post_init__(self):
        if not 0 < self.low_hz < self.high_hz:
            raise errors.InvalidSpec(
                f"band edges must satisfy 0 < low < high, got ({self.low_hz}, {self.high_hz})"
            )
        if self.high_hz >= self.fs_hz / 2:
            raise errors.InvalidSpec(
                f"high edge {self.high_hz} Hz must lie below Nyquist {self.fs_hz / 2} Hz"
            )
        if not 2 <= self.order <= 8:
            raise errors.InvalidSpec(f"order must be in [2, 8], got {self.order}")

    @property
    def center_hz(self) -> float:
        """Geometric center of the passband."""
        return float(np.sqrt(self.low_hz * self.high_hz))

    @staticmethod
    def for_band(band: Band, fs_hz: float, order: int = 4) -> "BandpassSpec":
        return BandpassSpec(band.low_hz, band.high_hz, order, fs_hz)


class FilterCoefficients:
    """Stable cascade of second-order sections ``(b0, b1, b2, a1, a2)``, a0 = 1."""

    __slots__ = ("sections",)

    def __init__(self, sections):
        arr = np.array(sections, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 5 or arr.shape[0] < 1:
            raise errors.InvalidSpec("sections must be a non-empty (n, 5) coefficient array")
        for a1, a2 in arr[:, 3:]:
            poles = np.roots([1.0, a1, a2])
            if np.abs(poles).max() >= 1.0:
                raise errors.InvalidSpec(f"unstable section: pole magnitude {np.abs(poles).max():.6f}")
        arr.setflags(write=False)
        self.sections = arr

    @property
    def n_sections(self) -> int:
        return self.sections.shape[0]

    @property
    def total_order(self) -> int:
        return 2 * self.n_sections

    def as_sos(self) -> np.ndarray:
        """scipy-style (n, 6) SOS matrix."""
        sos = np.empty((self.n_sections, 6))
        sos[:, 0:3] = self.sections[:, 0:3]
        sos[:, 3] = 1.0
        sos[:, 4:6] = self.sections[:, 3:5]
        return sos


def design_bandpass(spec: BandpassSpec) -> FilterCoefficients:
    """Butterworth bandpass in second-order sections for the given spec."""
    sos = signal.butter(
        spec.order,
        [spec.low_hz, spec.high_hz],
        btype="bandpass",
        output="sos",
        fs=spec.fs_hz,
    )
    return FilterCoefficients(np.column_stack([sos[:, 0:3], sos[:, 4:6]]))


def response_magnitude(coeffs: FilterCoefficients, f_hz, fs_hz: float) -> np.ndarray | float:
    """|H(e^{j 2 pi f / fs})| of the single-pass cascade, evaluated directly."""
    f = np.asarray(f_hz, dtype=np.float64)
    z = np.exp(-2j * np.pi * f / fs_hz)
    h = np.ones_like(z, dtype=np.complex128)
    for b0, b1, b2, a1, a2 in coeffs.sections:
        h *= (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
    mag = np.abs(h)
    return float(mag) if mag.ndim == 0 else mag


def filtfilt(coeffs: FilterCoefficients, series: ChannelSeries) -> ChannelSeries:
    """Forward-backward application of the cascade (zero phase, same length).

    Startup transients are suppressed by reflect-padding three delay-line
    lengths of samples at each end and trimming them after the backward pass.
    """
    x = series.values
    padlen = 3 * coeffs.total_order
    if len(x) <= padlen:
        raise errors.SeriesTooShort(
            f"need more than {padlen} samples for an order-{coeffs.total_order} cascade, got {len(x)}"
        )
    sos = coeffs.as_sos()
    padded = np.pad(x, padlen, mode="reflect")
    y = signal.sosfilt(sos, padded)
    y = signal.sosfilt(sos, y[::-1])[::-1]
    return ChannelSeries(series.id, series.start_time, series.dt, y[padlen : padlen + len(x)])


def blrms_trend(series: ChannelSeries, stride_s: int = 1) -> ChannelSeries:
    """RMS over consecutive ``stride_s``-second segments; trailing partial dropped.

    Output sampling is one value per stride, stamped at each segment start.
    """
    if stride_s < 1:
        raise errors.StrideMismatch(f"stride must be a positive integer, got {stride_s}")
    per_seg = Fraction(stride_s) / series.dt
    if per_seg.denominator != 1:
        raise errors.StrideMismatch(
            f"dt {series.dt} does not divide stride {stride_s} s"
        )
    m = int(per_seg)
    n_out = len(series) // m
    if n_out < 1:
        raise errors.SeriesTooShort(f"need at least {m} samples for one {stride_s} s segment")
    seg = series.values[: n_out * m].reshape(n_out, m)
    rms = np.sqrt(np.mean(seg * seg, axis=1))
    return ChannelSeries(series.id, series.start_time, Fraction(stride_s), rms)


def bandpass_blrms(
    raw: ChannelSeries,
    band: Band,
    order: int = 4,
    stride_s: int = 1,
) -> ChannelSeries:
    """Filter a raw trace into ``band`` and reduce it to a BLRMS trend.

    The output channel id carries the band; the raw series' id supplies
    sensor and axis.
    """
    fs = float(1 / raw.dt)
    coeffs = design_bandpass(BandpassSpec(band.low_hz, band.high_hz, order, fs))
    filtered = filtfilt(coeffs, raw)
    trend = blrms_trend(filtered, stride_s)
    out_id = ChannelId(raw.id.sensor, raw.id.axis, band)
    return ChannelSeries(out_id, trend.start_time, trend.dt, trend.values)
