"""Clip-to-input plumbing shared by featurize, train, eval and classify."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioClip, DatasetManifest, read_wav
from .errors import TouchSoundError
from .features import extract_features
from .preprocess import FilterSpec, TrimConfig, preprocess_pipeline
from .spectrogram import StftConfig, compute_spectrogram


@dataclass(frozen=True)
class PipelineConfig:
    filter_spec: FilterSpec = field(default_factory=FilterSpec)
    trim: TrimConfig = field(default_factory=TrimConfig)
    stft: StftConfig = field(default_factory=StftConfig)


def prepare(clip: AudioClip, cfg: PipelineConfig = PipelineConfig()) -> AudioClip:
    return preprocess_pipeline(clip, cfg.filter_spec, cfg.trim)


def clip_to_input(clip: AudioClip, cfg: PipelineConfig = PipelineConfig()) -> np.ndarray:
    """Raw clip to the 2-D model input."""
    return compute_spectrogram(prepare(clip, cfg), cfg.stft).values


def load_inputs(manifest: DatasetManifest, cfg: PipelineConfig = PipelineConfig(), label_map=None):
    """Run every manifest entry through the pipeline.

    Returns ``(inputs, targets, entries, skipped)`` where ``skipped`` lists
    ``(entry, reason)`` for clips the pipeline rejected. ``label_map`` maps a
    TouchLabel to a target index (identity when omitted).
    """
    xs, ys, kept, skipped = [], [], [], []
    for entry in manifest.entries:
        try:
            xs.append(clip_to_input(read_wav(manifest.resolve(entry)), cfg))
        except TouchSoundError as exc:
            skipped.append((entry, str(exc)))
            continue
        ys.append(int(label_map(entry.label)) if label_map else int(entry.label))
        kept.append(entry)
    size = cfg.stft.target_shape
    x = np.stack(xs) if xs else np.zeros((0, *size))
    return x, np.array(ys, dtype=np.intp), kept, skipped


def load_features(manifest: DatasetManifest, cfg: PipelineConfig = PipelineConfig()):
    """``[(entry, FeatureVector)]`` for every clip that survives preprocessing, plus skips."""
    rows, skipped = [], []
    for entry in manifest.entries:
        try:
            clip = prepare(read_wav(manifest.resolve(entry)), cfg)
        except TouchSoundError as exc:
            skipped.append((entry, str(exc)))
            continue
        rows.append((entry, extract_features(clip, cfg.stft)))
    return rows, skipped
