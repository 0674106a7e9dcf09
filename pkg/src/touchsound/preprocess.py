"""Signal conditioning: DC removal, silence trimming, high-pass filtering, peak normalization.

Stages run in that order in :func:`preprocess_pipeline`. The high-pass is a
causal Butterworth cascade of biquads designed by the bilinear transform
with the cutoff pre-warped, applied with zero initial state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioClip
from .errors import EmptyAfterTrim, InvalidCutoff

SUPPORTED_ORDERS = (2, 4, 8)


@dataclass(frozen=True)
class FilterSpec:
    cutoff_hz: float = 1000.0
    order: int = 4

    def __post_init__(self):
        if self.order not in SUPPORTED_ORDERS:
            raise ValueError(f"filter order must be one of {SUPPORTED_ORDERS}, got {self.order}")
        if not self.cutoff_hz > 0:
            raise InvalidCutoff(f"cutoff must be positive, got {self.cutoff_hz}")


@dataclass(frozen=True)
class BiquadCoefficients:
    """Second-order section normalized so that a0 = 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    @property
    def b(self):
        return np.array([self.b0, self.b1, self.b2])

    @property
    def a(self):
        return np.array([1.0, self.a1, self.a2])

    def pole_radii(self):
        return np.abs(np.roots([1.0, self.a1, self.a2]))

    def is_stable(self) -> bool:
        return bool(np.all(self.pole_radii() < 1.0))


@dataclass(frozen=True)
class TrimConfig:
    frame_ms: float = 10.0
    threshold_db: float = -40.0

    def __post_init__(self):
        if not self.frame_ms > 0:
            raise ValueError("frame_ms must be positive")
        if not self.threshold_db < 0:
            raise ValueError("threshold_db must be negative")

    def frame_length(self, sample_rate_hz: int) -> int:
        n = int(round(self.frame_ms * sample_rate_hz / 1000.0))
        if n < 1:
            raise ValueError(f"frame of {self.frame_ms} ms is shorter than one sample")
        return n


def remove_dc(clip: AudioClip) -> AudioClip:
    x = clip.samples
    if len(x) == 0:
        raise ValueError("empty clip")
    return clip.with_samples(x - math.fsum(x) / len(x))


def butterworth_q_factors(order: int) -> list:
    """Quality factors of the conjugate pole pairs of an analog Butterworth prototype."""
    return [1.0 / (2.0 * math.sin((2 * k - 1) * math.pi / (2 * order))) for k in range(1, order // 2 + 1)]


def design_highpass(spec: FilterSpec, sample_rate_hz: int) -> list:
    """Butterworth high-pass as ``order/2`` cascaded biquads.

    Each analog section ``s^2 / (s^2 + s*wc/Q + wc^2)`` is mapped through the
    bilinear transform with ``wc`` pre-warped to ``tan(pi*fc/fs)``, so the
    cascade is exactly -3.01 dB at the cutoff.
    """
    nyquist = sample_rate_hz / 2.0
    if not 0 < spec.cutoff_hz < nyquist:
        raise InvalidCutoff(f"cutoff {spec.cutoff_hz} Hz must lie in (0, {nyquist}) Hz")
    k = math.tan(math.pi * spec.cutoff_hz / sample_rate_hz)
    sections = []
    for q in butterworth_q_factors(spec.order):
        a0 = 1.0 + k / q + k * k
        sections.append(BiquadCoefficients(
            b0=1.0 / a0,
            b1=-2.0 / a0,
            b2=1.0 / a0,
            a1=2.0 * (k * k - 1.0) / a0,
            a2=(1.0 - k / q + k * k) / a0,
        ))
    return sections


def apply_filter(clip: AudioClip, coefficients) -> AudioClip:
    """Run the biquads in cascade order (transposed direct form II, zero state)."""
    y = clip.samples
    for sec in coefficients:
        y = lfilter(sec.b, sec.a, y)
    return clip.with_samples(y)


def frame_rms(samples: np.ndarray, frame_len: int) -> np.ndarray:
    """RMS of consecutive frames; a trailing partial frame is kept."""
    n = len(samples)
    n_frames = -(-n // frame_len)
    padded = np.zeros(n_frames * frame_len)
    padded[:n] = samples
    sq = (padded * padded).reshape(n_frames, frame_len).sum(axis=1)
    counts = np.full(n_frames, frame_len, dtype=np.float64)
    counts[-1] = n - (n_frames - 1) * frame_len
    return np.sqrt(sq / counts)


def trim_silence(clip: AudioClip, config: TrimConfig = TrimConfig()) -> AudioClip:
    """Keep samples from the first to the last frame louder than the gate.

    The gate sits ``threshold_db`` below the loudest frame's RMS.
    """
    x = clip.samples
    if len(x) == 0:
        raise ValueError("empty clip")
    flen = config.frame_length(clip.sample_rate_hz)
    rms = frame_rms(x, flen)
    gate = rms.max() * 10.0 ** (config.threshold_db / 20.0)
    loud = np.flatnonzero(rms > gate)
    if len(loud) == 0:
        raise EmptyAfterTrim("no frame above the trim threshold")
    start = loud[0] * flen
    stop = min(len(x), (loud[-1] + 1) * flen)
    return clip.with_samples(x[start:stop])


def normalize_peak(clip: AudioClip):
    """Scale to unit peak.

    Returns ``(clip, degenerate)``; an all-zero clip comes back unchanged with
    ``degenerate=True``.
    """
    peak = np.max(np.abs(clip.samples))
    if peak == 0:
        return clip.with_samples(clip.samples.copy()), True
    return clip.with_samples(clip.samples / peak), False


def preprocess_pipeline(clip: AudioClip, filter_spec: FilterSpec = FilterSpec(),
                        trim_config: TrimConfig = TrimConfig()) -> AudioClip:
    clip = remove_dc(clip)
    clip = trim_silence(clip, trim_config)
    clip = apply_filter(clip, design_highpass(filter_spec, clip.sample_rate_hz))
    clip, _ = normalize_peak(clip)
    return clip
