"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .audio_io import DEFAULT_SAMPLE_RATE, DatasetManifest, Split, load_manifest, read_wav, \
    save_manifest, write_wav
from .errors import TouchSoundError
from .evaluation import (LABEL_NAMES, SIMILAR_TYPE_MERGE, evaluate, format_report, merge_classes, overall_accuracy,
                         split_dataset, train)
from .features import class_frequency_stats, format_frequency_table, read_feature_csv, write_feature_csv
from .model import TrainConfig, load_model, save_model
from .pipeline import PipelineConfig, clip_to_input, load_features, prepare
from .preprocess import FilterSpec, TrimConfig, design_highpass
from .spectrogram import StftConfig, bucket_center_frequencies, bucket_rows, stft_magnitude, to_log
from .synth import generate_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _add_pipeline_flags(p):
    p.add_argument("--cutoff-hz", type=float, default=1000.0)
    p.add_argument("--filter-order", type=int, default=4)
    p.add_argument("--trim-db", type=float, default=-40.0)
    p.add_argument("--trim-frame-ms", type=float, default=10.0)


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-rate", type=int, default=DEFAULT_SAMPLE_RATE)


def build_parser():
    parser = _Parser(prog="touchsound", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--per-class", type=int, default=48)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--bit-depth", type=int, choices=(16, 32), default=32)
    _add_common(p)

    p = sub.add_parser("preprocess", help="write preprocessed copies of every clip")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_pipeline_flags(p)
    _add_common(p)

    p = sub.add_parser("featurize", help="compute the handcrafted feature CSV")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_pipeline_flags(p)
    _add_common(p)

    p = sub.add_parser("stats", help="per-class dominant frequency table from a feature CSV")
    p.add_argument("--features", required=True, type=Path)
    _add_common(p)

    p = sub.add_parser("train", help="train the CNN")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=1e-2)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--merge", action="store_true", help="train on merged classes (Knock+Tap, Rub+Stroke)")
    p.add_argument("--curve-out", type=Path, help="write per-epoch loss/accuracy CSV here")
    p.add_argument("--plot", action="store_true", help="also render the training curve next to --curve-out")
    _add_pipeline_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a model on the Test split")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--merge", action="store_true", help="score merged classes")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--out-dir", type=Path, help="also write report.txt and confusion.csv here")
    p.add_argument("--plot", action="store_true", help="render confusion matrices into --out-dir")
    p.add_argument("--reference", action="store_true", help="add the reference accuracy columns")
    _add_pipeline_flags(p)
    _add_common(p)

    p = sub.add_parser("classify", help="classify one WAV file")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("file", type=Path)
    _add_pipeline_flags(p)
    _add_common(p)

    p = sub.add_parser("figdata", help="raw vs preprocessed waveform and spectrogram CSVs")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--plot", action="store_true", help="also render <prefix>_comparison.png")
    _add_pipeline_flags(p)
    _add_common(p)
    return parser


def _pipeline_config(args) -> PipelineConfig:
    try:
        return PipelineConfig(FilterSpec(args.cutoff_hz, args.filter_order),
                              TrimConfig(args.trim_frame_ms, args.trim_db), StftConfig())
    except (ValueError, TouchSoundError) as exc:
        raise UsageError(str(exc)) from exc


def _check_filter(cfg: PipelineConfig, sample_rate: int):
    try:
        design_highpass(cfg.filter_spec, sample_rate)
    except TouchSoundError as exc:
        raise UsageError(str(exc)) from exc


def _with_splits(manifest: DatasetManifest, args) -> DatasetManifest:
    if manifest.has_splits:
        return manifest
    return split_dataset(manifest, args.test_fraction, args.seed)


def _warn_skipped(skipped):
    for entry, reason in skipped:
        print(f"skipped {entry.path}: {reason}", file=sys.stderr)


# ----------------------------------------------------------------------------


def cmd_synth(args):
    if args.per_class < 1:
        raise UsageError("--per-class must be >= 1")
    if not 0 < args.test_fraction < 1:
        raise UsageError("--test-fraction must be in (0, 1)")
    manifest = generate_dataset(args.per_class, args.out, args.seed, sample_rate_hz=args.sample_rate,
                                bit_depth=args.bit_depth)
    # a single clip per class cannot be split; train/eval split it later if needed
    if args.per_class >= 2:
        manifest = split_dataset(manifest, args.test_fraction, args.seed)
        save_manifest(manifest, args.out / "manifest.json")
    print(f"wrote {len(manifest.entries)} clips and {args.out / 'manifest.json'}")


def cmd_preprocess(args):
    cfg = _pipeline_config(args)
    manifest = load_manifest(args.manifest)
    _check_filter(cfg, manifest.sample_rate_hz)
    kept = []
    for entry in manifest.entries:
        try:
            clip = prepare(read_wav(manifest.resolve(entry)), cfg)
        except TouchSoundError as exc:
            _warn_skipped([(entry, str(exc))])
            continue
        dest = args.out / entry.path
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_wav(clip, dest, 32)
        kept.append(entry)
    out = DatasetManifest(kept, manifest.sample_rate_hz, manifest.version, args.out)
    save_manifest(out, args.out / "manifest.json")
    print(f"wrote {len(kept)} preprocessed clips and {args.out / 'manifest.json'}")


def cmd_featurize(args):
    cfg = _pipeline_config(args)
    manifest = load_manifest(args.manifest)
    _check_filter(cfg, manifest.sample_rate_hz)
    rows, skipped = load_features(manifest, cfg)
    _warn_skipped(skipped)
    write_feature_csv([(e.path, e.label, fv) for e, fv in rows], args.out)
    print(f"wrote features for {len(rows)} clips to {args.out}")


def cmd_stats(args):
    try:
        rows = read_feature_csv(args.features)
    except (OSError, ValueError) as exc:
        raise TouchSoundError(f"cannot read {args.features}: {exc}") from exc
    print(format_frequency_table(class_frequency_stats((label, fv) for _, label, fv in rows)))


def cmd_train(args):
    cfg = _pipeline_config(args)
    try:
        config = TrainConfig(args.learning_rate, args.momentum, args.epochs, args.batch_size, args.seed,
                             SIMILAR_TYPE_MERGE if args.merge else None)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest = _with_splits(load_manifest(args.manifest), args)
    _check_filter(cfg, manifest.sample_rate_hz)
    model, report = train(manifest, cfg, config, log=print)
    _warn_skipped(report.skipped)
    save_model(model, args.out)
    print(f"initial loss {report.initial_loss:.4f}  final loss {report.epoch_loss[-1]:.4f}")
    if report.test_accuracy is not None:
        print(f"test accuracy {report.test_accuracy:.4f}")
    print(f"wrote {args.out}")
    print(f"wall time {report.wall_time_s:.1f} s", file=sys.stderr)
    if args.curve_out:
        with open(args.curve_out, "w") as f:
            f.write("epoch,loss,accuracy\n")
            for i, (l, a) in enumerate(zip(report.epoch_loss, report.epoch_accuracy), 1):
                f.write(f"{i},{l:.6g},{a:.6g}\n")
        if args.plot:
            from .plotting import plot_training
            plot_training(report, Path(args.curve_out).with_suffix(".png"))


def cmd_eval(args):
    cfg = _pipeline_config(args)
    manifest = _with_splits(load_manifest(args.manifest), args)
    _check_filter(cfg, manifest.sample_rate_hz)
    model = load_model(args.model)
    test = manifest.subset(Split.Test)

    rows, _ = load_features(manifest, cfg)
    freq_stats = class_frequency_stats((e.label, fv) for e, fv in rows)

    if model.n_classes == len(LABEL_NAMES):
        cm = evaluate(model, test, cfg)
        merged = merge_classes(cm, SIMILAR_TYPE_MERGE)
        note = "merged accuracy: 6-way confusion matrix collapsed after prediction"
    elif model.n_classes == SIMILAR_TYPE_MERGE.n_groups:
        cm = evaluate(model, test, cfg, merge=SIMILAR_TYPE_MERGE)
        merged = cm
        note = "merged accuracy: model trained on merged classes"
    else:
        raise TouchSoundError(f"model has {model.n_classes} outputs; expected 6 or {SIMILAR_TYPE_MERGE.n_groups}")
    _warn_skipped(cm.skipped)

    report = format_report(cm, freq_stats, merged, SIMILAR_TYPE_MERGE, note, reference=args.reference)
    shown = merged if args.merge else cm
    csv_text = shown.to_csv()
    print(report)
    print(csv_text, end="")
    if args.out_dir:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "report.txt").write_text(report)
        (args.out_dir / "confusion.csv").write_text(cm.to_csv())
        (args.out_dir / "confusion_merged.csv").write_text(merged.to_csv())
        if args.plot:
            from .plotting import plot_confusion
            plot_confusion(cm, args.out_dir / "confusion.png", f"accuracy {overall_accuracy(cm):.2f}")
            plot_confusion(merged, args.out_dir / "confusion_merged.png",
                           f"merged accuracy {overall_accuracy(merged):.2f}")


def cmd_classify(args):
    cfg = _pipeline_config(args)
    clip = read_wav(args.file)
    model = load_model(args.model)
    _check_filter(cfg, clip.sample_rate_hz)
    probs = model.forward(clip_to_input(clip, cfg))
    names = LABEL_NAMES if model.n_classes == len(LABEL_NAMES) else SIMILAR_TYPE_MERGE.group_names
    print(names[int(np.argmax(probs))])
    for name, p in zip(names, probs):
        print(f"{name},{p:.6f}")


def _write_wave_csv(clip, path):
    t = np.arange(len(clip.samples)) / clip.sample_rate_hz
    np.savetxt(path, np.column_stack([t, clip.samples]), delimiter=",", fmt="%.6g",
               header="time_s,amplitude", comments="")


def _spectrogram_view(clip, stft: StftConfig):
    """Log grid bucketed to the model's frequency resolution, all frames kept."""
    db = to_log(stft_magnitude(clip, stft), stft.floor_db)
    rows = stft.target_shape[0]
    values = bucket_rows(db, rows)
    freqs = bucket_center_frequencies(stft.n_bins, rows, clip.sample_rate_hz / stft.window_size)
    times = (np.arange(values.shape[1]) * stft.hop + stft.window_size / 2) / clip.sample_rate_hz
    return values, freqs, times


def cmd_figdata(args):
    cfg = _pipeline_config(args)
    raw = read_wav(args.input)
    _check_filter(cfg, raw.sample_rate_hz)
    processed = prepare(raw, cfg)
    prefix = args.out_prefix
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)

    _write_wave_csv(raw, f"{prefix}_raw_wave.csv")
    _write_wave_csv(processed, f"{prefix}_processed_wave.csv")
    views = {}
    for tag, clip in (("raw", raw), ("processed", processed)):
        views[tag] = _spectrogram_view(clip, cfg.stft)
        np.savetxt(f"{prefix}_{tag}_spec.csv", views[tag][0], delimiter=",", fmt="%.6g")

    def mean_db(clip):
        m = stft_magnitude(clip, cfg.stft).mean(axis=1)
        return 20 * np.log10(np.maximum(m, 1e-12) / max(m.max(), 1e-300))

    freqs = np.arange(cfg.stft.n_bins) * raw.sample_rate_hz / cfg.stft.window_size
    raw_db, proc_db = mean_db(raw), mean_db(processed)
    np.savetxt(f"{prefix}_spectrum.csv", np.column_stack([freqs, raw_db, proc_db]), delimiter=",",
               fmt="%.6g", header="frequency_hz,raw_db,processed_db", comments="")
    written = [f"{prefix}_{s}.csv" for s in ("raw_wave", "processed_wave", "raw_spec", "processed_spec", "spectrum")]
    if args.plot:
        from .plotting import plot_comparison
        plot_comparison(raw, processed, views["raw"], views["processed"], (freqs, raw_db, proc_db),
                        f"{prefix}_comparison.png")
        written.append(f"{prefix}_comparison.png")
    print("\n".join(written))


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "featurize": cmd_featurize,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "classify": cmd_classify,
    "figdata": cmd_figdata,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.sample_rate < 8000:
            raise UsageError("--sample-rate must be >= 8000")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except TouchSoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
