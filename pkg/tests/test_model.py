import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import central_differences, kink_margin, relative_errors
from touchsound.errors import BadMagic, EmptySplit, ShapeMismatch, SizeMismatch, VersionMismatch
from touchsound.model import (PARAM_NAMES, TrainConfig, fit, forward, init_model, load_model, loss_and_gradients,
                              save_model, softmax)


def naive_forward(model, x):
    """Loop-by-loop reference forward pass for one input."""
    p = {n: getattr(model, n).astype(np.float64) for n in PARAM_NAMES}
    a = (1.0 + x / 20.0)[None]

    def conv(a, w, b):
        c_out, c_in = w.shape[:2]
        h, wd = a.shape[1:]
        pad = np.zeros((c_in, h + 2, wd + 2))
        pad[:, 1:-1, 1:-1] = a
        out = np.zeros((c_out, h, wd))
        for o in range(c_out):
            for i in range(h):
                for j in range(wd):
                    out[o, i, j] = np.sum(pad[:, i:i + 3, j:j + 3] * w[o]) + b[o]
        return out

    def pool(a):
        c, h, w = a.shape
        out = np.zeros((c, h // 2, w // 2))
        for k in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[k, i, j] = a[k, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
        return out

    a = pool(np.maximum(conv(a, p["conv1_w"], p["conv1_b"]), 0))
    a = pool(np.maximum(conv(a, p["conv2_w"], p["conv2_b"]), 0))
    h = np.maximum(p["dense1_w"] @ a.reshape(-1) + p["dense1_b"], 0)
    z = p["dense2_w"] @ h + p["dense2_b"]
    e = np.exp(z - z.max())
    return e / e.sum()


def small_model(seed=0, k=3):
    return init_model(seed, k, input_size=8, conv1_filters=2, conv2_filters=2, hidden=8, dtype=np.float64)


# ----------------------------------------------------------------------------
# structure


def test_parameter_count_k6():
    m = init_model(0, 6)
    expected = (8 * 9 + 8) + (16 * 8 * 9 + 16) + (64 * 16 * 16 * 16 + 64) + (6 * 64 + 6)
    assert m.param_count() == expected == 263_846
    assert m.dense2_w.shape == (6, 64) and m.n_classes == 6
    assert all(p.dtype == np.float32 for p in m.params())


def test_init_deterministic_and_seed_sensitive():
    a, b, c = init_model(5, 6), init_model(5, 6), init_model(6, 6)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    assert any(not np.array_equal(x, y) for x, y in zip(a.params(), c.params()))


def test_init_he_bounds_and_zero_bias():
    m = init_model(1, 4)
    for name, fan_in in [("conv1_w", 9), ("conv2_w", 72), ("dense1_w", 4096), ("dense2_w", 64)]:
        w = getattr(m, name)
        assert np.max(np.abs(w)) <= math.sqrt(6 / fan_in)
        assert np.std(w) == pytest.approx(math.sqrt(2 / fan_in), rel=0.2)
    for name in ("conv1_b", "conv2_b", "dense1_b", "dense2_b"):
        assert not np.any(getattr(m, name))


def test_init_rejects_one_class():
    with pytest.raises(ValueError):
        init_model(0, 1)


# ----------------------------------------------------------------------------
# forward


def test_forward_matches_loop_reference(rng):
    m = init_model(3, 6, input_size=16, conv1_filters=3, conv2_filters=4, hidden=5, dtype=np.float64)
    m.conv1_b[:] = rng.normal(0, 0.1, 3)
    m.dense2_b[:] = rng.normal(0, 0.1, 6)
    for _ in range(3):
        x = rng.uniform(-80, 0, (16, 16))
        np.testing.assert_allclose(m.forward(x), naive_forward(m, x), rtol=1e-10, atol=1e-14)


def test_forward_batch_matches_single(rng):
    m = init_model(0, 6)
    x = rng.uniform(-80, 0, (4, 64, 64))
    batch = m.forward_batch(x)
    # batched matrix products may sum in a different order
    for i in range(4):
        np.testing.assert_allclose(batch[i], forward(m, x[i]), rtol=1e-12, atol=1e-15)


@given(hnp.arrays(np.float64, (64, 64), elements=st.floats(-1e3, 1e3)))
def test_softmax_law_on_valid_inputs(x):
    p = init_model(0, 6).forward(x)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) <= 1e-6


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 8)), elements=st.floats(-1e300, 1e300)))
def test_softmax_normalized_for_any_finite_logits(z):
    p = softmax(z)
    assert np.all(p >= 0) and np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_zero_final_layer_gives_uniform(rng):
    m = init_model(2, 6)
    m.dense2_w[:] = 0
    np.testing.assert_allclose(m.forward(rng.uniform(-80, 0, (64, 64))), np.full(6, 1 / 6), atol=1e-12)


@pytest.mark.parametrize("shape", [(63, 64), (64, 65), (64,), (2, 2, 64, 64)])
def test_shape_mismatch(shape):
    with pytest.raises(ShapeMismatch):
        init_model(0, 6).forward(np.zeros(shape))


# ----------------------------------------------------------------------------
# loss and gradients


def test_loss_uniform_is_ln_k(rng):
    m = init_model(0, 6)
    m.dense2_w[:] = 0
    x = rng.uniform(-80, 0, (5, 64, 64))
    loss, _ = loss_and_gradients(m, (x, [0, 1, 2, 3, 4]))
    assert loss == pytest.approx(math.log(6), abs=1e-4)


def test_loss_perfect_prediction(rng):
    m = init_model(0, 6, dtype=np.float64)
    m.dense2_w[:] = 0
    m.dense2_b[:] = [40, 0, 0, 0, 0, 0]
    loss, _ = loss_and_gradients(m, (rng.uniform(-80, 0, (3, 64, 64)), [0, 0, 0]))
    assert loss <= 1e-6


def test_loss_clamped_for_hopeless_prediction(rng):
    m = init_model(0, 6, dtype=np.float64)
    m.dense2_w[:] = 0
    m.dense2_b[:] = [1000, 0, 0, 0, 0, 0]
    loss, _ = loss_and_gradients(m, (rng.uniform(-80, 0, (1, 64, 64)), [3]))
    assert loss == pytest.approx(-math.log(1e-12))


def gradient_check_batch(seed, margin=0.01):
    """Shrunken model plus a random batch kept clear of ReLU and pooling kinks.

    Mapped inputs lie in [-3, 1], so a 1e-3 weight step moves a first-layer
    preactivation by at most 3e-3; the margin leaves room for downstream layers.
    """
    rng = np.random.default_rng(seed)
    m = small_model(seed)
    for name in ("conv1_b", "conv2_b", "dense1_b", "dense2_b"):
        getattr(m, name)[:] = rng.normal(0, 0.1, getattr(m, name).shape)
    for _ in range(1000):
        x = rng.uniform(-80, 0, (2, 8, 8))
        if kink_margin(m, x) > margin:
            return m, x, rng.integers(0, 3, 2)
    raise RuntimeError("no kink-free batch found")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_central_differences(seed):
    m, x, y = gradient_check_batch(seed)
    _, grads = loss_and_gradients(m, (x, y))
    numeric = central_differences(lambda mm: loss_and_gradients(mm, (x, y))[0], m, PARAM_NAMES)
    for name in PARAM_NAMES:
        assert grads[name].shape == getattr(m, name).shape
        assert np.max(relative_errors(grads[name], numeric[name])) <= 1e-3, name


# ----------------------------------------------------------------------------
# training


def _toy_problem(rng, n=24, size=8):
    """Two classes: energy in the top or bottom half of the grid."""
    x = np.full((n, size, size), -60.0) + rng.normal(0, 2, (n, size, size))
    y = np.arange(n) % 2
    for i in range(n):
        rows = slice(0, size // 2) if y[i] == 0 else slice(size // 2, size)
        x[i, rows] = rng.uniform(-10, 0, (size // 2, size))
    return x, y


def test_zero_learning_rate_keeps_weights(rng):
    m = small_model(k=2)
    x, y = _toy_problem(rng)
    trained, _ = fit(m, x, y, TrainConfig(learning_rate=0.0, epochs=1, batch_size=5))
    assert all(np.array_equal(a, b) for a, b in zip(m.params(), trained.params()))


def test_fit_does_not_mutate_input(rng):
    m = small_model(k=2)
    before = [p.copy() for p in m.params()]
    fit(m, *_toy_problem(rng), TrainConfig(epochs=2, batch_size=4))
    assert all(np.array_equal(a, b) for a, b in zip(before, m.params()))


def test_training_deterministic(rng):
    x, y = _toy_problem(rng)
    runs = [fit(small_model(k=2), x, y, TrainConfig(epochs=3, batch_size=5, seed=4)) for _ in range(2)]
    (m1, r1), (m2, r2) = runs
    assert r1.epoch_loss == r2.epoch_loss
    assert all(a.tobytes() == b.tobytes() for a, b in zip(m1.params(), m2.params()))


def test_training_learns_toy_problem(rng):
    x, y = _toy_problem(rng, n=40)
    m, report = fit(small_model(k=2), x, y, TrainConfig(learning_rate=0.05, epochs=25, batch_size=8), x, y)
    assert report.epoch_loss[-1] < report.initial_loss
    assert report.test_accuracy == 1.0
    assert all(0 <= a <= 1 for a in report.epoch_accuracy)
    assert all(math.isfinite(l) for l in report.epoch_loss)


def test_fit_empty_raises():
    with pytest.raises(EmptySplit):
        fit(small_model(), np.zeros((0, 8, 8)), np.zeros(0, dtype=int))


@pytest.mark.parametrize("kwargs", [dict(learning_rate=-1.0), dict(epochs=0), dict(batch_size=0)])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


# ----------------------------------------------------------------------------
# serialization


def test_save_load_round_trip(tmp_path, rng):
    m = init_model(9, 6)
    m.dense1_b[:] = rng.normal(size=64)
    save_model(m, tmp_path / "m.tsm")
    back = load_model(tmp_path / "m.tsm")
    assert all(a.tobytes() == b.tobytes() for a, b in zip(m.params(), back.params()))
    x = rng.uniform(-80, 0, (10, 64, 64))
    np.testing.assert_array_equal(m.forward_batch(x), back.forward_batch(x))


def test_file_layout(tmp_path):
    m = init_model(0, 4)
    save_model(m, tmp_path / "m.tsm")
    blob = (tmp_path / "m.tsm").read_bytes()
    assert blob[:4] == b"TSM1"
    assert struct.unpack("<II", blob[4:12]) == (1, 4)
    assert len(blob) == 12 + 4 * m.param_count()
    first = np.frombuffer(blob[12:12 + 4 * 72], dtype="<f4")
    np.testing.assert_array_equal(first, m.conv1_w.reshape(-1))
    last = np.frombuffer(blob[-16:], dtype="<f4")
    np.testing.assert_array_equal(last, m.dense2_b)


def test_truncated_file(tmp_path):
    save_model(init_model(0, 6), tmp_path / "m.tsm")
    blob = (tmp_path / "m.tsm").read_bytes()
    for cut in (8, 100, len(blob) - 1):
        (tmp_path / "t.tsm").write_bytes(blob[:cut])
        with pytest.raises(SizeMismatch):
            load_model(tmp_path / "t.tsm")
    (tmp_path / "t.tsm").write_bytes(blob + b"\0")
    with pytest.raises(SizeMismatch):
        load_model(tmp_path / "t.tsm")


def test_bad_magic_and_version(tmp_path):
    save_model(init_model(0, 6), tmp_path / "m.tsm")
    blob = (tmp_path / "m.tsm").read_bytes()
    (tmp_path / "b.tsm").write_bytes(b"XSM1" + blob[4:])
    with pytest.raises(BadMagic):
        load_model(tmp_path / "b.tsm")
    (tmp_path / "v.tsm").write_bytes(blob[:4] + struct.pack("<I", 2) + blob[8:])
    with pytest.raises(VersionMismatch):
        load_model(tmp_path / "v.tsm")
