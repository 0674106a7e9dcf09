"""Handcrafted per-clip descriptors and per-class dominant-frequency statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, TouchLabel
from .spectrogram import StftConfig, stft_magnitude

# Five octave-ish bands over 500 Hz - 16 kHz; the last band includes its upper edge.
DEFAULT_BANDS = ((500.0, 1000.0), (1000.0, 2000.0), (2000.0, 4000.0), (4000.0, 8000.0), (8000.0, 16000.0))

# In-band energy below this fraction (-60 dB) of total spectral energy counts
# as none: Hann sidelobes of an out-of-band tone leak ~-70 dB into the bands.
DEGENERATE_RATIO = 1e-6

FEATURE_COLUMNS = ("path", "label", "duration_s", "peak", "rms", "dominant_hz", "centroid_hz",
                   "band1", "band2", "band3", "band4", "band5")


@dataclass
class FeatureVector:
    duration_s: float
    peak_amplitude: float
    rms: float
    dominant_frequency_hz: float
    spectral_centroid_hz: float
    band_energy: tuple
    degenerate: bool = False


@dataclass
class BandEnergy:
    fractions: np.ndarray
    degenerate: bool


@dataclass
class ClassStats:
    mean_hz: float
    std_hz: float
    count: int


@dataclass
class ClassFrequencyStats:
    per_class: dict = field(default_factory=dict)  # TouchLabel -> ClassStats; absent classes omitted

    def __getitem__(self, label):
        return self.per_class[label]

    def __contains__(self, label):
        return label in self.per_class


def averaged_spectrum(clip: AudioClip, config: StftConfig = StftConfig()):
    """Frame-averaged magnitude spectrum and its bin-center frequencies."""
    mag = stft_magnitude(clip, config)
    freqs = np.arange(config.n_bins) * clip.sample_rate_hz / config.window_size
    return mag.mean(axis=1), freqs


def band_energy_distribution(spectrum: np.ndarray, freqs: np.ndarray, bands=DEFAULT_BANDS) -> BandEnergy:
    """Share of squared-magnitude energy per band, normalized over the union of bands.

    Bands are half-open ``[lo, hi)`` except the band with the highest upper
    edge, which is closed. Output order follows ``bands``.
    """
    power = np.asarray(spectrum, dtype=np.float64) ** 2
    freqs = np.asarray(freqs, dtype=np.float64)
    top = max(hi for _, hi in bands)
    sums = []
    for lo, hi in bands:
        if hi == top:
            mask = (freqs >= lo) & (freqs <= hi)
        else:
            mask = (freqs >= lo) & (freqs < hi)
        sums.append(power[mask].sum())
    sums = np.array(sums)
    in_band = sums.sum()
    if in_band == 0 or in_band <= DEGENERATE_RATIO * power.sum():
        return BandEnergy(np.zeros(len(bands)), True)
    return BandEnergy(sums / in_band, False)


def extract_features(clip: AudioClip, config: StftConfig = StftConfig(), bands=DEFAULT_BANDS) -> FeatureVector:
    x = clip.samples
    duration = len(x) / clip.sample_rate_hz
    peak = float(np.max(np.abs(x))) if len(x) else 0.0
    rms = float(np.sqrt(np.mean(x * x))) if len(x) else 0.0

    spectrum, freqs = averaged_spectrum(clip, config)
    total = spectrum.sum()
    if total == 0:
        return FeatureVector(duration, peak, rms, 0.0, 0.0, tuple([0.0] * len(bands)), True)
    dominant = float(freqs[int(np.argmax(spectrum))])
    centroid = float((freqs * spectrum).sum() / total)
    energy = band_energy_distribution(spectrum, freqs, bands)
    return FeatureVector(duration, peak, rms, dominant, centroid,
                         tuple(float(v) for v in energy.fractions), energy.degenerate)


def class_frequency_stats(labeled) -> ClassFrequencyStats:
    """Mean and sample standard deviation (n-1) of dominant frequency per label.

    ``labeled`` is an iterable of ``(label, FeatureVector)`` pairs. Labels
    without samples are left out.
    """
    groups = {}
    for label, fv in labeled:
        groups.setdefault(TouchLabel(label), []).append(fv.dominant_frequency_hz)
    out = {}
    for label in TouchLabel:
        vals = groups.get(label)
        if not vals:
            continue
        n = len(vals)
        mean = math.fsum(vals) / n
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
        out[label] = ClassStats(mean, std, n)
    return ClassFrequencyStats(out)


# ----------------------------------------------------------------------------
# CSV


def _g6(v: float) -> str:
    return f"{v:.6g}"


def write_feature_csv(rows, path) -> None:
    """``rows``: iterable of ``(path, label, FeatureVector)``."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(FEATURE_COLUMNS)
        for rel, label, fv in rows:
            w.writerow([rel, TouchLabel(label).name, _g6(fv.duration_s), _g6(fv.peak_amplitude), _g6(fv.rms),
                        _g6(fv.dominant_frequency_hz), _g6(fv.spectral_centroid_hz),
                        *[_g6(b) for b in fv.band_energy]])


def read_feature_csv(path):
    """Inverse of :func:`write_feature_csv`; the degenerate flag is not stored."""
    rows = []
    with open(Path(path), newline="") as f:
        reader = csv.DictReader(f)
        missing = set(FEATURE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"feature CSV missing columns: {sorted(missing)}")
        for rec in reader:
            fv = FeatureVector(
                float(rec["duration_s"]), float(rec["peak"]), float(rec["rms"]),
                float(rec["dominant_hz"]), float(rec["centroid_hz"]),
                tuple(float(rec[f"band{i}"]) for i in range(1, 6)),
            )
            rows.append((rec["path"], TouchLabel.parse(rec["label"]), fv))
    return rows


def format_frequency_table(stats: ClassFrequencyStats) -> str:
    lines = [f"{'Touch type':<10}  {'Dominant frequency (Hz)':>24}  {'n':>4}"]
    for label in TouchLabel:
        if label not in stats:
            lines.append(f"{label.name:<10}  {'absent':>24}  {0:>4}")
            continue
        s = stats[label]
        lines.append(f"{label.name:<10}  {f'{s.mean_hz:.0f} ± {s.std_hz:.0f}':>24}  {s.count:>4}")
    return "\n".join(lines)
