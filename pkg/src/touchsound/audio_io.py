"""WAV reading/writing and labeled dataset manifests."""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import IoFailure, MalformedWav, ParseError, UnknownLabel, UnsupportedFormat

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

DEFAULT_SAMPLE_RATE = 44100
MIN_SAMPLE_RATE = 8000
PCM16_SCALE = 32768.0
PCM16_MAX = 1.0 - 1.0 / PCM16_SCALE

MANIFEST_VERSION = 1


class TouchLabel(enum.IntEnum):
    """The six touch types. Ordinal values index model outputs and matrices."""

    Knock = 0
    Tap = 1
    Rub = 2
    Stroke = 3
    Scratch = 4
    Press = 5

    @classmethod
    def parse(cls, name: str) -> "TouchLabel":
        try:
            return cls[name]
        except KeyError:
            raise UnknownLabel(name) from None


class Split(str, enum.Enum):
    Train = "Train"
    Test = "Test"


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz < MIN_SAMPLE_RATE:
            raise ValueError(f"sample rate must be an integer >= {MIN_SAMPLE_RATE} Hz, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate_hz)


# ----------------------------------------------------------------------------
# WAV


def _read_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWav("not a RIFF/WAVE file")
    pos = 12
    chunks = {}
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise MalformedWav(f"chunk {cid!r} truncated: declared {size} bytes, found {len(body)}")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    return chunks


def _parse_fmt(body: bytes):
    if len(body) < 16:
        raise MalformedWav("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", body)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise MalformedWav("extensible fmt chunk shorter than 40 bytes")
        (tag,) = struct.unpack_from("<H", body, 24)
    return tag, channels, rate, block_align, bits


def read_wav(path) -> AudioClip:
    """Read a PCM16 or float32 WAV file as a mono clip.

    Stereo files are mixed down by averaging the two channels.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc

    chunks = _read_chunks(data)
    if b"fmt " not in chunks:
        raise MalformedWav(f"{path}: missing fmt chunk")
    if b"data" not in chunks:
        raise MalformedWav(f"{path}: missing data chunk")
    tag, channels, rate, block_align, bits = _parse_fmt(chunks[b"fmt "])

    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedFormat(f"{path}: format tag {tag:#06x} with {bits} bits per sample")
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{path}: {channels} channels")
    if block_align != channels * dtype.itemsize:
        raise MalformedWav(f"{path}: block align {block_align} inconsistent with format")
    if rate < MIN_SAMPLE_RATE:
        raise UnsupportedFormat(f"{path}: sample rate {rate} Hz below {MIN_SAMPLE_RATE}")

    raw = chunks[b"data"]
    n_frames = len(raw) // block_align
    frames = np.frombuffer(raw[:n_frames * block_align], dtype=dtype).reshape(n_frames, channels)
    samples = frames.astype(np.float64)
    if dtype.kind == "i":
        samples /= PCM16_SCALE
    if channels == 2:
        samples = (samples[:, 0] + samples[:, 1]) / 2.0
    else:
        samples = samples[:, 0]
    return AudioClip(samples, rate)


def write_wav(clip: AudioClip, path, bit_depth: int = 32) -> None:
    """Write a mono clip as PCM16 (``bit_depth=16``) or float32 (``bit_depth=32``).

    For 16-bit output samples are clamped to ``[-1, 1 - 1/32768]`` before
    rounding to the nearest integer code.
    """
    samples = np.asarray(clip.samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    if bit_depth == 16:
        clamped = np.clip(samples, -1.0, PCM16_MAX)
        payload = np.rint(clamped * PCM16_SCALE).astype("<i2").tobytes()
        tag = WAVE_FORMAT_PCM
    elif bit_depth == 32:
        payload = samples.astype("<f4").tobytes()
        tag = WAVE_FORMAT_IEEE_FLOAT
    else:
        raise ValueError(f"bit_depth must be 16 or 32, got {bit_depth}")

    block_align = bit_depth // 8
    fmt = struct.pack("<HHIIHH", tag, 1, clip.sample_rate_hz,
                      clip.sample_rate_hz * block_align, block_align, bit_depth)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    path = Path(path)
    try:
        path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


# ----------------------------------------------------------------------------
# Manifest


@dataclass
class ManifestEntry:
    path: str
    label: TouchLabel
    split: Optional[Split] = None


@dataclass
class DatasetManifest:
    """Labeled list of clips.

    Entry paths are relative to ``base_dir``, which is set from the manifest
    location on load and is not serialized.
    """

    entries: list = field(default_factory=list)
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    version: int = MANIFEST_VERSION
    base_dir: Optional[Path] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ValueError(f"duplicate manifest path {e.path!r}")
            seen.add(e.path)

    def resolve(self, entry: ManifestEntry) -> Path:
        return (self.base_dir or Path(".")) / entry.path

    def subset(self, split: Split) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.split == split],
                               self.sample_rate_hz, self.version, self.base_dir)

    @property
    def has_splits(self) -> bool:
        return bool(self.entries) and all(e.split is not None for e in self.entries)

    def to_json(self) -> str:
        entries = []
        for e in self.entries:
            item = {"path": e.path, "label": e.label.name}
            if e.split is not None:
                item["split"] = e.split.value
            entries.append(item)
        doc = {"version": self.version, "sample_rate_hz": self.sample_rate_hz, "entries": entries}
        return json.dumps(doc, indent=2) + "\n"


def parse_manifest(text: str, base_dir=None) -> DatasetManifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(doc, dict):
        raise ParseError("manifest must be a JSON object")
    try:
        version = doc["version"]
        rate = doc["sample_rate_hz"]
        raw_entries = doc["entries"]
    except KeyError as exc:
        raise ParseError(f"missing key {exc.args[0]!r}") from None
    if not isinstance(version, int) or not isinstance(rate, int) or not isinstance(raw_entries, list):
        raise ParseError("version and sample_rate_hz must be integers, entries a list")

    entries = []
    seen = set()
    for i, item in enumerate(raw_entries):
        if not isinstance(item, dict) or not isinstance(item.get("path"), str) or "label" not in item:
            raise ParseError(f"entry {i}: expected object with 'path' and 'label'")
        split = item.get("split")
        if split is not None:
            try:
                split = Split(split)
            except ValueError:
                raise ParseError(f"entry {i}: bad split {split!r}") from None
        if item["path"] in seen:
            raise ParseError(f"entry {i}: duplicate path {item['path']!r}")
        seen.add(item["path"])
        entries.append(ManifestEntry(item["path"], TouchLabel.parse(item["label"]), split))
    return DatasetManifest(entries, rate, version, Path(base_dir) if base_dir is not None else None)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc
    return parse_manifest(text, base_dir=path.parent)


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    try:
        path.write_text(manifest.to_json())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc
