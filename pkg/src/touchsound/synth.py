"""Synthetic touch sounds standing in for recorded robot-shell audio.

Each touch type gets an acoustic archetype:

* Knock / Tap: a few exponentially damped partials near the class center
  frequency (Knock rings longer than Tap).
* Rub / Stroke: band-limited noise under a raised-cosine envelope; Rub is
  amplitude-modulated at 8-15 Hz, Stroke is smooth and longer.
* Scratch: a Poisson train of very short damped bursts.
* Press: one quiet onset thump followed by a near-silent sustain.

Decay times are T60 values (time to fall 60 dB). Levels are dB re full
scale; the noise floor and Press sustain are dB relative to the event level.

Randomness comes from ``numpy.random.Generator(PCG64(seed))``. Per-sample
seeds in :func:`generate_dataset` are derived with a splitmix64 step, so a
single file can be regenerated without generating the rest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audio_io import (DEFAULT_SAMPLE_RATE, AudioClip, DatasetManifest, ManifestEntry, TouchLabel,
                       save_manifest, write_wav)
from .errors import IoFailure

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
LN_1000 = math.log(1000.0)  # amplitude ratio of a 60 dB decay
SCRATCH_DEAD_TIME_S = 0.015

# Dominant frequency targets per touch type, Hz.
CENTER_HZ = {
    TouchLabel.Knock: 1938.0,
    TouchLabel.Tap: 1769.0,
    TouchLabel.Rub: 1663.0,
    TouchLabel.Stroke: 1605.0,
    TouchLabel.Scratch: 1641.0,
    TouchLabel.Press: 2269.0,
}


@dataclass(frozen=True)
class TouchRecipe:
    center_hz: float
    duration_s: tuple           # event length range
    envelope: str               # "damped" | "raised_cosine" | "burst_train" | "press"
    level_db: float = 0.0
    decay_ms: tuple = (30.0, 60.0)   # T60 of partials / bursts / Press thump
    am_hz: tuple = (0.0, 0.0)        # Rub amplitude modulation rate range
    am_depth: float = 0.0
    event_rate_hz: float = 0.0       # Scratch burst rate
    sustain_db: float = -40.0        # Press sustain re thump peak


def default_recipes() -> dict:
    c = CENTER_HZ
    return {
        TouchLabel.Knock: TouchRecipe(c[TouchLabel.Knock], (0.20, 0.30), "damped", 0.0, (30.0, 60.0)),
        TouchLabel.Tap: TouchRecipe(c[TouchLabel.Tap], (0.20, 0.30), "damped", -6.0, (10.0, 25.0)),
        TouchLabel.Rub: TouchRecipe(c[TouchLabel.Rub], (0.6, 1.0), "raised_cosine", -6.0,
                                    am_hz=(8.0, 15.0), am_depth=0.6),
        TouchLabel.Stroke: TouchRecipe(c[TouchLabel.Stroke], (1.0, 1.5), "raised_cosine", -10.0),
        TouchLabel.Scratch: TouchRecipe(c[TouchLabel.Scratch], (0.6, 1.0), "burst_train", -3.0, (4.0, 8.0),
                                        event_rate_hz=25.0),
        TouchLabel.Press: TouchRecipe(c[TouchLabel.Press], (0.8, 1.2), "press", -20.0, (80.0, 120.0),
                                      sustain_db=-40.0),
    }


@dataclass(frozen=True)
class TouchSynthParams:
    recipes: dict = field(default_factory=default_recipes)
    noise_floor_db: float = -50.0
    preroll_s: tuple = (0.02, 0.06)
    postroll_s: tuple = (0.05, 0.10)

    def with_center(self, label, center_hz) -> "TouchSynthParams":
        recipes = dict(self.recipes)
        recipes[label] = replace(recipes[label], center_hz=center_hz)
        return replace(self, recipes=recipes)


@dataclass
class SynthInfo:
    """Where the event sits inside a generated clip."""

    event_start: int
    event_length: int
    onsets: list


def splitmix64(x: int) -> int:
    x = (x + GOLDEN_GAMMA) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def sample_seed(master_seed: int, label: TouchLabel, index: int) -> int:
    """Seed for the ``index``-th sample of ``label``: splitmix64 of a packed key."""
    key = (master_seed & MASK64) ^ ((int(label) << 32) | (index & 0xFFFFFFFF))
    return splitmix64(key)


def _damped(n, sr, freq, t60_s, phase=0.0):
    t = np.arange(n) / sr
    return np.exp(-LN_1000 * t / t60_s) * np.sin(2 * np.pi * freq * t + phase)


def _band_noise(rng, n, sr, center, broad_rel=0.7, narrow_hz=30.0, narrow_gain=1.0):
    """Gaussian noise shaped to a broad bump plus a narrow resonance at ``center``."""
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, 1.0 / sr)
    shape = np.exp(-0.5 * ((f - center) / (broad_rel * center)) ** 2)
    shape += narrow_gain * np.exp(-0.5 * ((f - center) / narrow_hz) ** 2)
    x = np.fft.irfft(spec * shape, n)
    return x / np.sqrt(np.mean(x * x))


def _raised_cosine(n):
    return 0.5 - 0.5 * np.cos(2 * np.pi * (np.arange(n) + 0.5) / n)


def _render_damped(rng, r, n, sr):
    partials = int(rng.integers(2, 5))
    x = np.zeros(n)
    f0 = r.center_hz * (1 + rng.uniform(-0.03, 0.03))
    t60 = rng.uniform(*r.decay_ms) / 1000
    x += _damped(n, sr, f0, t60, rng.uniform(0, 2 * np.pi))
    # secondary partials ring shorter than the fundamental
    for _ in range(partials - 1):
        f = r.center_hz * (1 + rng.uniform(-0.10, 0.10))
        x += rng.uniform(0.2, 0.5) * _damped(n, sr, f, t60 * rng.uniform(0.4, 0.8), rng.uniform(0, 2 * np.pi))
    x += 0.1 * _damped(n, sr, 2 * f0, t60 / 2, rng.uniform(0, 2 * np.pi))
    return x, [0]


def _render_raised_cosine(rng, r, n, sr):
    x = _band_noise(rng, n, sr, r.center_hz) * _raised_cosine(n)
    if r.am_depth > 0:
        t = np.arange(n) / sr
        x *= 1 + r.am_depth * np.sin(2 * np.pi * rng.uniform(*r.am_hz) * t + rng.uniform(0, 2 * np.pi))
    return x, []


def _render_burst_train(rng, r, n, sr):
    x = np.zeros(n)
    onsets = []
    # renewal process with a dead time; mean rate stays event_rate_hz
    dead = min(SCRATCH_DEAD_TIME_S, 0.5 / r.event_rate_hz)
    mean_gap = 1.0 / r.event_rate_hz - dead
    t = rng.exponential(mean_gap)
    while True:
        start = int(t * sr)
        if start >= n:
            break
        onsets.append(start)
        f = r.center_hz * (1 + rng.uniform(-0.03, 0.03))
        t60 = rng.uniform(*r.decay_ms) / 1000
        m = min(n - start, int(t60 * sr) + 1)
        x[start:start + m] += rng.uniform(0.7, 1.0) * _damped(m, sr, f, t60, rng.uniform(0, 2 * np.pi))
        t += dead + rng.exponential(mean_gap)
    return x, onsets


def _render_press(rng, r, n, sr):
    f = r.center_hz * (1 + rng.uniform(-0.03, 0.03))
    thump = _damped(n, sr, f, rng.uniform(*r.decay_ms) / 1000, rng.uniform(0, 2 * np.pi))
    sustain = _band_noise(rng, n, sr, r.center_hz, broad_rel=0.1, narrow_gain=4.0)
    ramp = np.clip(np.arange(n) / (0.02 * sr), 0, 1)
    fade = np.clip((n - np.arange(n)) / (0.05 * sr), 0, 1)
    sustain *= 10 ** (r.sustain_db / 20) * ramp * fade
    return thump + sustain, [0]


_RENDERERS = {
    "damped": _render_damped,
    "raised_cosine": _render_raised_cosine,
    "burst_train": _render_burst_train,
    "press": _render_press,
}


def render_touch(label, params: TouchSynthParams = TouchSynthParams(),
                 sample_rate_hz: int = DEFAULT_SAMPLE_RATE, seed: int = 0):
    """Generate one clip and report where the event lies in it."""
    label = TouchLabel(label)
    r = params.recipes[label]
    rng = np.random.Generator(np.random.PCG64(seed & MASK64))
    sr = sample_rate_hz

    n_event = int(round(rng.uniform(*r.duration_s) * sr))
    n_pre = int(round(rng.uniform(*params.preroll_s) * sr))
    n_post = int(round(rng.uniform(*params.postroll_s) * sr))

    event, onsets = _RENDERERS[r.envelope](rng, r, n_event, sr)
    level = 10 ** (r.level_db / 20)
    event *= level / np.max(np.abs(event))

    x = np.zeros(n_pre + n_event + n_post)
    x[n_pre:n_pre + n_event] = event
    x += level * 10 ** (params.noise_floor_db / 20) * rng.standard_normal(len(x))
    return AudioClip(x, sr), SynthInfo(n_pre, n_event, [n_pre + o for o in onsets])


def synth_touch(label, params: TouchSynthParams = TouchSynthParams(),
                sample_rate_hz: int = DEFAULT_SAMPLE_RATE, seed: int = 0) -> AudioClip:
    return render_touch(label, params, sample_rate_hz, seed)[0]


def detect_transients(clip: AudioClip, frame_ms: float = 4.0, neighborhood_ms: float = 50.0,
                      rise_db: float = 6.0, gate_db: float = -30.0) -> list:
    """Frame indices of impulsive events.

    A frame counts when its RMS is the local maximum within +-2 frames, lies
    within ``gate_db`` of the loudest frame, and exceeds the RMS of the
    centered ``neighborhood_ms`` window by more than ``rise_db``.
    """
    flen = max(1, int(round(frame_ms * clip.sample_rate_hz / 1000)))
    n_frames = len(clip.samples) // flen
    power = (clip.samples[:n_frames * flen].reshape(n_frames, flen) ** 2).mean(axis=1)
    half = int(round(neighborhood_ms / frame_ms / 2))
    gate = power.max() * 10 ** (gate_db / 10)
    rise = 10 ** (rise_db / 10)
    peaks = []
    for i in range(n_frames):
        p = power[i]
        if p <= gate:
            continue
        lo, hi = max(0, i - 2), min(n_frames, i + 3)
        if p < power[lo:hi].max() or np.any(power[lo:i] == p):
            continue
        nb = power[max(0, i - half):min(n_frames, i + half + 1)].mean()
        if p > rise * nb:
            peaks.append(i)
    return peaks


def generate_dataset(per_class: int, out_dir, master_seed: int = 0,
                     params: TouchSynthParams = TouchSynthParams(),
                     sample_rate_hz: int = DEFAULT_SAMPLE_RATE, bit_depth: int = 32) -> DatasetManifest:
    """Write ``out_dir/<label>/NNN.wav`` for every label plus ``out_dir/manifest.json``."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    out_dir = Path(out_dir)
    entries = []
    try:
        for label in TouchLabel:
            (out_dir / label.name.lower()).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc.strerror or exc}") from exc
    for label in TouchLabel:
        for i in range(per_class):
            rel = f"{label.name.lower()}/{i + 1:03d}.wav"
            clip = synth_touch(label, params, sample_rate_hz, sample_seed(master_seed, label, i))
            write_wav(clip, out_dir / rel, bit_depth)
            entries.append(ManifestEntry(rel, label))
    manifest = DatasetManifest(entries, sample_rate_hz, base_dir=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
