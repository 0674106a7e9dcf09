"""Matplotlib renderings written next to the CSV outputs (``--plot``)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_METADATA = {"Software": None}  # keeps output bytes independent of the matplotlib version

plt.rcParams.update({
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "legend.fontsize": 8,
})


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=PNG_METADATA)
    plt.close(fig)


def plot_comparison(raw, processed, raw_spec, processed_spec, spectra, path):
    """Raw vs preprocessed: waveform, spectrogram, and frame-averaged spectrum.

    ``raw_spec``/``processed_spec`` are ``(values, freq_hz, times_s)``;
    ``spectra`` is ``(freq_hz, raw_db, processed_db)``.
    """
    fig, axes = plt.subplots(3, 2, figsize=(9, 8))
    for col, (clip, (values, freqs, times), title) in enumerate(
            [(raw, raw_spec, "original"), (processed, processed_spec, "processed")]):
        t = np.arange(len(clip.samples)) / clip.sample_rate_hz
        ax = axes[0, col]
        ax.plot(t, clip.samples, lw=0.5, color="k")
        ax.set_title(title)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("amplitude")
        ax = axes[1, col]
        ax.pcolormesh(times, freqs / 1000, values, shading="nearest", cmap="magma", vmin=values.min(), vmax=0)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("frequency (kHz)")
    freqs, raw_db, proc_db = spectra
    ax = axes[2, 0]
    ax.plot(freqs / 1000, raw_db, lw=0.7, label="original")
    ax.plot(freqs / 1000, proc_db, lw=0.7, label="processed")
    ax.set_xlabel("frequency (kHz)")
    ax.set_ylabel("mean magnitude (dB)")
    ax.legend()
    axes[2, 1].axis("off")
    fig.tight_layout()
    _save(fig, path)


def plot_confusion(cm, path, title="confusion matrix"):
    counts = cm.counts
    fig, ax = plt.subplots(figsize=(1.0 + 0.7 * len(counts), 0.8 + 0.7 * len(counts)))
    ax.imshow(counts, cmap="Blues")
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                    color="white" if counts[i, j] > counts.max() / 2 else "black", fontsize=8)
    ax.set_xticks(range(len(cm.class_names)), cm.class_names, rotation=45, ha="right")
    ax.set_yticks(range(len(cm.class_names)), cm.class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_training(report, path):
    epochs = np.arange(1, len(report.epoch_loss) + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, report.epoch_loss, "o-", ms=3, label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax2 = ax.twinx()
    ax2.plot(epochs, report.epoch_accuracy, "s--", ms=3, color="C1", label="train accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.set_ylabel("accuracy")
    fig.legend(loc="center right")
    fig.tight_layout()
    _save(fig, path)
