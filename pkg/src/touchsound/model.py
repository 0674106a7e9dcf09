"""Small convolutional classifier over 64x64 log spectrograms, written in numpy.

Architecture (for the default ``input_size=64``)::

    input 1x64x64
    conv 8 @ 3x3, stride 1, pad 1 -> ReLU -> maxpool 2x2       8x32x32
    conv 16 @ 3x3, stride 1, pad 1 -> ReLU -> maxpool 2x2     16x16x16
    flatten (channel-major, then row, then column)            4096
    dense 64 -> ReLU -> dense K -> softmax

Parameter count for K=6 is 263,846. Weights are stored as float32; every
forward/backward pass and every optimizer update is computed in float64 and
rounded back to float32 after each step.

Spectrogram inputs (dB relative to max, floored at -80) are mapped to
``1 + dB/20`` (so roughly [-3, 1]) inside :meth:`CnnModel.forward_batch`.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BadMagic, EmptySplit, IoFailure, ShapeMismatch, SizeMismatch, VersionMismatch

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense1_w", "dense1_b", "dense2_w", "dense2_b")
INPUT_SCALE_DB = 20.0
LOG_CLAMP = 1e-12

MAGIC = b"TSM1"
FORMAT_VERSION = 1
DEFAULT_INPUT_SIZE = 64


# ----------------------------------------------------------------------------
# layer primitives (NCHW, float64)


def _conv3x3_forward(x, w, b):
    bsz, c, h, wd = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))  # B,C,H,W,3,3
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * h * wd, c * 9)
    out = cols @ w.reshape(f, c * 9).T + b
    return out.reshape(bsz, h, wd, f).transpose(0, 3, 1, 2), cols


def _conv3x3_backward(dout, cols, x_shape, w, need_dx=True):
    bsz, c, h, wd = x_shape
    f = w.shape[0]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(f, c * 9)).reshape(bsz, h, wd, c, 3, 3)
    dxp = np.zeros((bsz, c, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _maxpool_forward(x):
    bsz, c, h, w = x.shape
    r = x.reshape(bsz, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, h // 2, w // 2, 4)
    idx = r.argmax(axis=-1)
    return np.take_along_axis(r, idx[..., None], axis=-1)[..., 0], idx


def _maxpool_backward(dout, idx, x_shape):
    bsz, c, h, w = x_shape
    r = np.zeros((bsz, c, h // 2, w // 2, 4))
    np.put_along_axis(r, idx[..., None], dout[..., None], axis=-1)
    return r.reshape(bsz, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ----------------------------------------------------------------------------


@dataclass
class CnnModel:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    dense1_w: np.ndarray  # (hidden, flattened)
    dense1_b: np.ndarray
    dense2_w: np.ndarray  # (K, hidden)
    dense2_b: np.ndarray
    input_size: int = DEFAULT_INPUT_SIZE

    @property
    def n_classes(self) -> int:
        return self.dense2_w.shape[0]

    def params(self) -> list:
        return [getattr(self, n) for n in PARAM_NAMES]

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "CnnModel":
        return CnnModel(*[p.copy() for p in self.params()], input_size=self.input_size)

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        s = self.input_size
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (s, s):
            raise ShapeMismatch(f"expected input of shape ({s}, {s}), got {x.shape[-2:] if x.ndim >= 2 else x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        return x

    def _forward(self, x):
        p = {n: getattr(self, n).astype(np.float64) for n in PARAM_NAMES}
        a0 = (1.0 + x / INPUT_SCALE_DB)[:, None]
        z1, cols1 = _conv3x3_forward(a0, p["conv1_w"], p["conv1_b"])
        r1 = np.maximum(z1, 0.0)
        m1, idx1 = _maxpool_forward(r1)
        z2, cols2 = _conv3x3_forward(m1, p["conv2_w"], p["conv2_b"])
        r2 = np.maximum(z2, 0.0)
        m2, idx2 = _maxpool_forward(r2)
        flat = m2.reshape(len(x), -1)
        z3 = flat @ p["dense1_w"].T + p["dense1_b"]
        r3 = np.maximum(z3, 0.0)
        logits = r3 @ p["dense2_w"].T + p["dense2_b"]
        cache = dict(p=p, a0=a0, z1=z1, cols1=cols1, r1=r1, idx1=idx1, m1=m1, z2=z2, cols2=cols2,
                     r2=r2, idx2=idx2, m2=m2, flat=flat, z3=z3, r3=r3)
        return logits, cache

    def forward_batch(self, x) -> np.ndarray:
        """Class probabilities, shape (B, K), for a batch of spectrograms."""
        logits, _ = self._forward(self._check_input(x))
        return softmax(logits)

    def forward(self, spectrogram) -> np.ndarray:
        """Class probabilities for one spectrogram."""
        values = getattr(spectrogram, "values", spectrogram)
        x = np.asarray(values, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeMismatch(f"expected a 2-D spectrogram, got {x.ndim} dimensions")
        return self.forward_batch(x)[0]

    def predict(self, x) -> np.ndarray:
        return self.forward_batch(x).argmax(axis=1)


def forward(model: CnnModel, spectrogram) -> np.ndarray:
    return model.forward(spectrogram)


def init_model(seed: int, n_classes: int, input_size: int = DEFAULT_INPUT_SIZE, conv1_filters: int = 8,
               conv2_filters: int = 16, hidden: int = 64, dtype=np.float32) -> CnnModel:
    """He-style uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)); zero biases."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if input_size % 4:
        raise ValueError("input_size must be divisible by 4")
    rng = np.random.Generator(np.random.PCG64(seed))
    flat = conv2_filters * (input_size // 4) ** 2

    def he(shape, fan_in):
        lim = np.sqrt(6.0 / fan_in)
        return rng.uniform(-lim, lim, size=shape).astype(dtype)

    return CnnModel(
        conv1_w=he((conv1_filters, 1, 3, 3), 9),
        conv1_b=np.zeros(conv1_filters, dtype),
        conv2_w=he((conv2_filters, conv1_filters, 3, 3), conv1_filters * 9),
        conv2_b=np.zeros(conv2_filters, dtype),
        dense1_w=he((hidden, flat), flat),
        dense1_b=np.zeros(hidden, dtype),
        dense2_w=he((n_classes, hidden), hidden),
        dense2_b=np.zeros(n_classes, dtype),
        input_size=input_size,
    )


def loss_and_gradients(model: CnnModel, batch):
    """Mean cross-entropy (log clamped at 1e-12) and float64 gradients by name.

    ``batch`` is ``(inputs, labels)`` with inputs of shape (B, S, S).
    """
    loss, grads, _ = _loss_grads_probs(model, batch)
    return loss, grads


def _loss_grads_probs(model, batch):
    x, y = batch
    x = model._check_input(x)
    y = np.asarray(y, dtype=np.intp)
    n = len(x)
    logits, c = model._forward(x)
    probs = softmax(logits)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(n), y], LOG_CLAMP))))

    p = c["p"]
    g = {}
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    g["dense2_w"] = dlogits.T @ c["r3"]
    g["dense2_b"] = dlogits.sum(axis=0)
    dz3 = (dlogits @ p["dense2_w"]) * (c["z3"] > 0)
    g["dense1_w"] = dz3.T @ c["flat"]
    g["dense1_b"] = dz3.sum(axis=0)
    dm2 = (dz3 @ p["dense1_w"]).reshape(c["m2"].shape)
    dz2 = _maxpool_backward(dm2, c["idx2"], c["r2"].shape) * (c["z2"] > 0)
    dm1, g["conv2_w"], g["conv2_b"] = _conv3x3_backward(dz2, c["cols2"], c["m1"].shape, p["conv2_w"])
    dz1 = _maxpool_backward(dm1, c["idx1"], c["r1"].shape) * (c["z1"] > 0)
    _, g["conv1_w"], g["conv1_b"] = _conv3x3_backward(dz1, c["cols1"], c["a0"].shape, p["conv1_w"],
                                                      need_dx=False)
    return loss, g, probs


# ----------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    class_merge: Optional[object] = None  # evaluation.ClassMerge; trains a G-way model

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainReport:
    initial_loss: float
    epoch_loss: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)
    test_accuracy: Optional[float] = None
    wall_time_s: float = 0.0
    skipped: list = field(default_factory=list)  # (entry, reason) pairs from the data loader


def fit(model: CnnModel, x, y, config: TrainConfig = TrainConfig(), x_test=None, y_test=None,
        log=None):
    """Minibatch SGD with momentum on in-memory arrays. Returns ``(model, report)``.

    The epoch shuffle stream is seeded from ``config.seed``; the input model is
    not modified.
    """
    t0 = time.perf_counter()
    x = model._check_input(x)
    y = np.asarray(y, dtype=np.intp)
    if len(x) == 0:
        raise EmptySplit("no training samples")
    model = model.copy()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 1])))
    velocity = {n: np.zeros(getattr(model, n).shape) for n in PARAM_NAMES}

    initial = _mean_loss(model, x, y, config.batch_size)
    report = TrainReport(initial_loss=initial)
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        correct = 0
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, probs = _loss_grads_probs(model, (x[idx], y[idx]))
            total += loss * len(idx)
            # accuracy as seen by the forward pass preceding this step's update
            correct += int(np.sum(probs.argmax(axis=1) == y[idx]))
            for name in PARAM_NAMES:
                v = velocity[name]
                v *= config.momentum
                v -= config.learning_rate * grads[name]
                w = getattr(model, name)
                setattr(model, name, (w.astype(np.float64) + v).astype(w.dtype))
        report.epoch_loss.append(total / len(x))
        report.epoch_accuracy.append(correct / len(x))
        if log:
            log(f"epoch {epoch + 1:3d}  loss {report.epoch_loss[-1]:.4f}  acc {report.epoch_accuracy[-1]:.3f}")
    if x_test is not None and len(x_test):
        report.test_accuracy = float(np.mean(model.predict(x_test) == np.asarray(y_test)))
    report.wall_time_s = time.perf_counter() - t0
    return model, report


def _mean_loss(model, x, y, batch_size):
    total = 0.0
    for start in range(0, len(x), batch_size):
        sl = slice(start, start + batch_size)
        probs = model.forward_batch(x[sl])
        total += float(-np.sum(np.log(np.maximum(probs[np.arange(len(probs)), y[sl]], LOG_CLAMP))))
    return total / len(x)


# ----------------------------------------------------------------------------
# serialization


def _expected_shapes(n_classes, input_size=DEFAULT_INPUT_SIZE):
    flat = 16 * (input_size // 4) ** 2
    return [(8, 1, 3, 3), (8,), (16, 8, 3, 3), (16,), (64, flat), (64,), (n_classes, 64), (n_classes,)]


def save_model(model: CnnModel, path) -> None:
    """``TSM1``, u32 version, u32 K, then float32 LE arrays in PARAM_NAMES order, row-major."""
    if [p.shape for p in model.params()] != _expected_shapes(model.n_classes):
        raise ShapeMismatch("only the standard 64x64 architecture can be saved")
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", FORMAT_VERSION, model.n_classes)
    for p in model.params():
        buf += np.ascontiguousarray(p, dtype="<f4").tobytes()
    try:
        Path(path).write_bytes(bytes(buf))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def load_model(path) -> CnnModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"{path}: not a model file")
    if len(data) < 12:
        raise SizeMismatch(f"{path}: truncated header")
    version, k = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if k < 2:
        raise SizeMismatch(f"{path}: implausible class count {k}")
    shapes = _expected_shapes(k)
    expected = 12 + 4 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        raise SizeMismatch(f"{path}: {len(data)} bytes, expected {expected} for K={k}")
    arrays = []
    pos = 12
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(s).astype(np.float32))
        pos += 4 * n
    return CnnModel(*arrays)
