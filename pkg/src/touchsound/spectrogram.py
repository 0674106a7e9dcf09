"""Fixed-size log-magnitude spectrograms.

Frame ``t`` covers samples ``[t*hop, t*hop + window_size)``; a periodic Hann
window is applied and bins ``0..window_size/2`` of the real DFT are kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip
from .errors import DegenerateAllZero

LOG_EPS = 1e-12


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 1024
    hop: int = 256
    target_shape: tuple = (64, 64)
    floor_db: float = -80.0

    def __post_init__(self):
        w = self.window_size
        if w < 2 or w & (w - 1):
            raise ValueError(f"window_size must be a power of two, got {w}")
        if not 0 < self.hop <= w:
            raise ValueError(f"hop must be in (0, {w}], got {self.hop}")
        if not self.floor_db < 0:
            raise ValueError("floor_db must be negative")

    @property
    def n_bins(self) -> int:
        return self.window_size // 2 + 1


@dataclass
class Spectrogram:
    values: np.ndarray  # [freq bucket][frame], dB relative to grid max
    freq_resolution_hz: float
    hop_s: float

    @property
    def shape(self):
        return self.values.shape


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (exact DFT-bin leakage onto neighbours only)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, config: StftConfig) -> int:
    n = max(n_samples, config.window_size)
    return (n - config.window_size) // config.hop + 1


def frames(samples: np.ndarray, config: StftConfig) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < config.window_size:
        x = np.concatenate([x, np.zeros(config.window_size - len(x))])
    view = np.lib.stride_tricks.sliding_window_view(x, config.window_size)
    return view[::config.hop]


def stft_magnitude(clip: AudioClip, config: StftConfig = StftConfig()) -> np.ndarray:
    """Raw magnitude grid of shape ``(window_size/2 + 1, n_frames)``."""
    windowed = frames(clip.samples, config) * hann(config.window_size)
    return np.abs(np.fft.rfft(windowed, axis=1)).T


def frame_energy(magnitudes: np.ndarray, window_size: int) -> float:
    """Full-spectrum energy sum(|X[k]|^2, k=0..N-1) from one half-spectrum column.

    Bins strictly between DC and Nyquist are counted twice (their mirror
    images carry the same magnitude); DC and Nyquist once.
    """
    m2 = np.asarray(magnitudes, dtype=np.float64) ** 2
    if len(m2) != window_size // 2 + 1:
        raise ValueError("expected window_size/2 + 1 bins")
    return float(m2[0] + m2[-1] + 2.0 * m2[1:-1].sum())


def to_log(grid: np.ndarray, floor_db: float = -80.0) -> np.ndarray:
    """dB relative to the grid maximum, clamped below at ``floor_db``."""
    grid = np.asarray(grid, dtype=np.float64)
    peak = grid.max()
    if peak <= 0:
        raise DegenerateAllZero("cannot take log of an all-zero grid")
    # clamp relative to the peak so grids with a tiny maximum still top out at 0 dB
    db = 20.0 * np.log10(np.maximum(grid / peak, LOG_EPS))
    return np.maximum(db, floor_db)


def bucket_edges(n_rows: int, n_buckets: int) -> np.ndarray:
    """Row boundaries of equal contiguous buckets; leftover rows join the last bucket."""
    if n_buckets > n_rows:
        raise ValueError(f"cannot reduce {n_rows} rows to {n_buckets} buckets")
    size = n_rows // n_buckets
    edges = np.arange(n_buckets + 1) * size
    edges[-1] = n_rows
    return edges


def bucket_rows(grid: np.ndarray, n_buckets: int) -> np.ndarray:
    edges = bucket_edges(grid.shape[0], n_buckets)
    return np.stack([grid[lo:hi].mean(axis=0) for lo, hi in zip(edges[:-1], edges[1:])])


def fit_time(grid: np.ndarray, n_frames: int, fill: float) -> np.ndarray:
    """Center-crop or symmetrically pad the frame axis (extra column goes right)."""
    t = grid.shape[1]
    if t >= n_frames:
        start = (t - n_frames) // 2
        return grid[:, start:start + n_frames]
    left = (n_frames - t) // 2
    out = np.full((grid.shape[0], n_frames), fill, dtype=np.float64)
    out[:, left:left + t] = grid
    return out


def fit_to_shape(grid: np.ndarray, target_shape=(64, 64), floor_db: float = -80.0,
                 freq_resolution_hz: float = float("nan"), hop_s: float = float("nan")) -> Spectrogram:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty grid")
    rows, cols = target_shape
    if grid.shape[0] != rows:
        grid = bucket_rows(grid, rows)
    return Spectrogram(fit_time(grid, cols, floor_db), freq_resolution_hz, hop_s)


def compute_spectrogram(clip: AudioClip, config: StftConfig = StftConfig()) -> Spectrogram:
    """stft_magnitude -> to_log -> fit_to_shape."""
    raw = stft_magnitude(clip, config)
    db = to_log(raw, config.floor_db)
    return fit_to_shape(db, config.target_shape, config.floor_db,
                        clip.sample_rate_hz / config.window_size,
                        config.hop / clip.sample_rate_hz)


def bucket_center_frequencies(n_bins: int, n_buckets: int, freq_resolution_hz: float) -> np.ndarray:
    edges = bucket_edges(n_bins, n_buckets)
    return (edges[:-1] + edges[1:] - 1) / 2.0 * freq_resolution_hz
