"""Stratified splits, confusion matrices, and merged-class scoring.

Per-class accuracy is recall: the diagonal count over the row total.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .audio_io import DatasetManifest, Split, TouchLabel
from .errors import ClassTooSmall, EmptySplit, ShapeMismatch
from .model import CnnModel, TrainConfig, fit, init_model
from .pipeline import PipelineConfig, load_inputs

# Accuracies reported for the recorded robot dataset, per touch type and per
# merged group. Kept for side-by-side display only.
REFERENCE_ACCURACY = {
    TouchLabel.Knock: 0.69, TouchLabel.Tap: 0.67, TouchLabel.Rub: 0.75,
    TouchLabel.Stroke: 0.85, TouchLabel.Scratch: 1.00, TouchLabel.Press: 0.65,
}
REFERENCE_MERGED_ACCURACY = {"Knock+Tap": 0.81, "Rub+Stroke": 0.89, "Scratch": 0.85, "Press": 0.67}


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [true][predicted]
    class_names: tuple
    skipped: list = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts shape {self.counts.shape} does not match {k} classes")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("true\\pred," + ",".join(self.class_names) + "\n")
        for name, row in zip(self.class_names, self.counts):
            out.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
        return out.getvalue()


@dataclass(frozen=True)
class ClassMerge:
    """Total map from class index to group index; groups are numbered 0..G-1."""

    group_of: tuple
    group_names: tuple

    def __post_init__(self):
        groups = sorted(set(self.group_of))
        if groups != list(range(len(self.group_names))):
            raise ValueError("groups must be contiguous 0..G-1 and match group_names")

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def __call__(self, label) -> int:
        return self.group_of[int(label)]

    @classmethod
    def identity(cls, names) -> "ClassMerge":
        return cls(tuple(range(len(names))), tuple(names))

    @classmethod
    def from_groups(cls, groups, names=None) -> "ClassMerge":
        """Build from a list of label groups, e.g. ``[[Knock, Tap], [Rub, Stroke], ...]``."""
        members = [int(m) for g in groups for m in g]
        if sorted(members) != list(range(len(members))):
            raise ValueError("merge must cover every class exactly once")
        group_of = [0] * len(members)
        for gi, g in enumerate(groups):
            for m in g:
                group_of[int(m)] = gi
        if names is None:
            names = tuple("+".join(TouchLabel(m).name for m in g) for g in groups)
        return cls(tuple(group_of), tuple(names))


# Knock with Tap and Rub with Stroke; Scratch and Press stay on their own.
SIMILAR_TYPE_MERGE = ClassMerge.from_groups([
    [TouchLabel.Knock, TouchLabel.Tap],
    [TouchLabel.Rub, TouchLabel.Stroke],
    [TouchLabel.Scratch],
    [TouchLabel.Press],
])

LABEL_NAMES = tuple(label.name for label in TouchLabel)


def split_dataset(manifest: DatasetManifest, test_fraction: float = 0.2, seed: int = 0) -> DatasetManifest:
    """Stratified split; each class sends ``round(test_fraction * n)`` clips (at least 1) to Test."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
    by_label = {}
    for i, e in enumerate(manifest.entries):
        by_label.setdefault(e.label, []).append(i)
    test = set()
    for label in sorted(by_label):
        idx = by_label[label]
        if len(idx) < 2:
            raise ClassTooSmall(f"class {label.name} has {len(idx)} sample(s); need at least 2")
        n_test = min(len(idx) - 1, max(1, math.floor(test_fraction * len(idx) + 0.5)))
        chosen = rng.permutation(len(idx))[:n_test]
        test.update(idx[j] for j in chosen)
    entries = [replace(e, split=Split.Test if i in test else Split.Train) for i, e in enumerate(manifest.entries)]
    return DatasetManifest(entries, manifest.sample_rate_hz, manifest.version, manifest.base_dir)


def confusion_from_predictions(true, pred, class_names) -> ConfusionMatrix:
    k = len(class_names)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (np.asarray(true, dtype=np.intp), np.asarray(pred, dtype=np.intp)), 1)
    return ConfusionMatrix(counts, tuple(class_names))


def evaluate(model: CnnModel, manifest: DatasetManifest, cfg: PipelineConfig = PipelineConfig(),
             merge: ClassMerge = None) -> ConfusionMatrix:
    """Confusion matrix of ``model`` over every clip in ``manifest``.

    With ``merge``, the model must output one probability per group and true
    labels are mapped through the merge. Clips the pipeline rejects are
    skipped and listed in ``ConfusionMatrix.skipped``.
    """
    if not manifest.entries:
        raise EmptySplit("nothing to evaluate")
    names = merge.group_names if merge is not None else LABEL_NAMES
    if model.n_classes != len(names):
        raise ShapeMismatch(f"model has {model.n_classes} outputs, expected {len(names)}")
    x, y, _, skipped = load_inputs(manifest, cfg, merge)
    pred = model.predict(x) if len(x) else np.zeros(0, dtype=np.intp)
    cm = confusion_from_predictions(y, pred, names)
    cm.skipped = skipped
    return cm


def per_class_accuracy(cm: ConfusionMatrix) -> dict:
    """Recall per class name; classes with an empty row are left out."""
    out = {}
    for i, name in enumerate(cm.class_names):
        row = cm.counts[i].sum()
        if row > 0:
            out[name] = cm.counts[i, i] / row
    return out


def overall_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.counts.sum()
    if total == 0:
        raise EmptySplit("empty confusion matrix")
    return float(np.trace(cm.counts) / total)


def merge_classes(cm: ConfusionMatrix, merge: ClassMerge) -> ConfusionMatrix:
    if len(merge.group_of) != len(cm.class_names):
        raise ValueError("merge does not cover the matrix classes")
    g = np.asarray(merge.group_of)
    out = np.zeros((merge.n_groups, merge.n_groups), dtype=np.int64)
    np.add.at(out, (g[:, None], g[None, :]), cm.counts)
    return ConfusionMatrix(out, tuple(merge.group_names), list(cm.skipped))


def train(manifest: DatasetManifest, cfg: PipelineConfig = PipelineConfig(),
          config: TrainConfig = TrainConfig(), log=None):
    """Train on the Train split; report accuracy on the Test split when present."""
    merge = config.class_merge
    train_set = manifest.subset(Split.Train)
    if not train_set.entries:
        raise EmptySplit("no entries in the Train split")
    x, y, _, skipped = load_inputs(train_set, cfg, merge)
    if len(x) == 0:
        raise EmptySplit("every training clip was rejected by the pipeline")
    test_set = manifest.subset(Split.Test)
    xt, yt = None, None
    if test_set.entries:
        xt, yt, _, _ = load_inputs(test_set, cfg, merge)
    k = merge.n_groups if merge is not None else len(TouchLabel)
    model = init_model(config.seed, k, input_size=cfg.stft.target_shape[0])
    model, report = fit(model, x, y, config, xt, yt, log=log)
    report.skipped = skipped
    return model, report


# ----------------------------------------------------------------------------
# report


def format_report(cm: ConfusionMatrix, freq_stats=None, merged_cm: ConfusionMatrix = None,
                  merge: ClassMerge = SIMILAR_TYPE_MERGE, note: str = "", reference: bool = False) -> str:
    """Text table: touch type, dominant frequency, accuracy, merged-group accuracy.

    ``cm`` may be 6-way (one row per touch type) or already merged; in the
    latter case the per-type accuracy column is left blank.
    """
    six_way = tuple(cm.class_names) == LABEL_NAMES
    acc = per_class_accuracy(cm) if six_way else {}
    if merged_cm is None and not six_way:
        merged_cm = cm
    elif merged_cm is None:
        merged_cm = merge_classes(cm, merge)
    macc = per_class_accuracy(merged_cm)

    header = f"{'Touch type':<10}  {'Dominant frequency (Hz)':>24}  {'Accuracy':>8}  {'Merged accuracy':>22}"
    if reference:
        header += f"  {'Ref.':>5}  {'Ref. merged':>11}"
    lines = [header]
    for label in TouchLabel:
        freq = "absent"
        if freq_stats is not None and label in freq_stats:
            s = freq_stats[label]
            freq = f"{s.mean_hz:.0f} ± {s.std_hz:.0f}"
        a = f"{acc[label.name]:.2f}" if label.name in acc else ""
        group = merge.group_names[merge(label)]
        m = f"{group} {macc[group]:.2f}" if group in macc else group
        line = f"{label.name:<10}  {freq:>24}  {a:>8}  {m:>22}"
        if reference:
            line += f"  {REFERENCE_ACCURACY[label]:>5.2f}  {REFERENCE_MERGED_ACCURACY.get(group, float('nan')):>11.2f}"
        lines.append(line)
    lines.append("")
    if six_way:
        lines.append(f"overall accuracy: {overall_accuracy(cm):.4f}")
    lines.append(f"merged overall accuracy: {overall_accuracy(merged_cm):.4f}")
    lines.append(f"evaluated clips: {cm.total}  skipped: {len(cm.skipped)}")
    if note:
        lines.append(note)
    return "\n".join(lines) + "\n"
