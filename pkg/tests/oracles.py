"""Independent reference computations used by the unit and acceptance tests.

Nothing here imports the package's numerical code; each oracle restates the
math in the most direct form available.
"""

import cmath
import math

import numpy as np


def cascade_response_db(sections, f, fs):
    """|H(e^jw)| in dB by direct complex arithmetic on the section polynomials."""
    z = cmath.exp(1j * 2 * math.pi * f / fs)
    h = 1.0 + 0j
    for s in sections:
        h *= (s.b0 + s.b1 / z + s.b2 / z ** 2) / (1 + s.a1 / z + s.a2 / z ** 2)
    return 20 * math.log10(abs(h))


def butterworth_hp_db(f, fc, fs, order):
    """Closed-form magnitude of a pre-warped bilinear Butterworth high-pass."""
    ratio = math.tan(math.pi * fc / fs) / math.tan(math.pi * f / fs)
    return -10 * math.log10(1 + ratio ** (2 * order))


def recurrence(sections, x):
    """Plain difference equation y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2]."""
    y = list(x)
    for s in sections:
        out = []
        x1 = x2 = y1 = y2 = 0.0
        for v in y:
            o = s.b0 * v + s.b1 * x1 + s.b2 * x2 - s.a1 * y1 - s.a2 * y2
            x2, x1, y2, y1 = x1, v, y1, o
            out.append(o)
        y = out
    return np.array(y)


def kahan_mean(x):
    total = comp = 0.0
    for v in x:
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total / len(x)


def dft_energy(frame):
    """sum_k |X[k]|^2 over all N bins from an explicit O(N^2) DFT matrix."""
    n = len(frame)
    idx = np.arange(n)
    x = np.exp(-2j * np.pi * np.outer(idx, idx) / n) @ np.asarray(frame, dtype=np.float64)
    return float(np.sum(np.abs(x) ** 2))


def periodic_hann(n):
    return np.array([math.sin(math.pi * i / n) ** 2 for i in range(n)])


def central_differences(loss_fn, model, names, step=1e-3):
    """Numerical gradient of ``loss_fn(model)`` for every entry of every named parameter."""
    out = {}
    for name in names:
        p = getattr(model, name)
        g = np.zeros(p.shape)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = loss_fn(model)
            p[idx] = orig - step
            down = loss_fn(model)
            p[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def relative_errors(analytic, numeric, floor=1e-8):
    """|a - n| / max(|a|, |n|); entries where both are below ``floor`` count as exact."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n) / np.where(scale > floor, scale, 1.0)
    return np.where(scale > floor, err, 0.0)


def kink_margin(model, x):
    """Smallest distance of any ReLU input from 0 or any 2x2 pool winner from its runner-up.

    Finite differences straddling one of these kinks measure the wrong
    one-sided slope, so a gradient check needs the margin to exceed the reach
    of the perturbation.
    """
    _, c = model._forward(model._check_input(x))
    margins = [np.min(np.abs(c[k])) for k in ("z1", "z2", "z3")]
    for k in ("r1", "r2"):
        r = c[k]
        b, ch, h, w = r.shape
        win = r.reshape(b, ch, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
        win = np.sort(win, axis=1)
        live = win[:, 3] > 0  # all-zero windows pass zero gradient either way
        if np.any(live):
            margins.append(np.min(win[live, 3] - win[live, 2]))
    return float(min(margins))
