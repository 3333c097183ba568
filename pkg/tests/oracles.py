"""Independent reference implementations used only by the tests.

Everything here is written with plain Python loops or ``math`` so it shares
no code path with the package under test.
"""
from __future__ import annotations

import math

import numpy as np


def central_difference(f, arrays, eps=1e-6):
    """Numerical gradient of scalar ``f()`` w.r.t. each array in ``arrays`` (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + eps
            fp = f()
            a[idx] = old - eps
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def rel_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||), 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    den = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if den == 0 else float(np.linalg.norm(a - n) / den)


# -- metrics ------------------------------------------------------------------
def smape_loop(forecasts, actuals):
    total = 0.0
    for f_row, y_row in zip(forecasts, actuals):
        s = 0.0
        for f, y in zip(f_row, y_row):
            den = abs(y) + abs(f)
            s += 0.0 if den == 0 else abs(y - f) / den
        total += 200.0 * s / len(y_row)
    return total / len(actuals)


def mase_loop(forecasts, actuals, insamples, season):
    total = 0.0
    for f_row, y_row, x in zip(forecasts, actuals, insamples):
        scale = 0.0
        for t in range(season, len(x)):
            scale += abs(x[t] - x[t - season])
        scale /= len(x) - season
        err = 0.0
        for f, y in zip(f_row, y_row):
            err += abs(y - f)
        total += err / len(y_row) / scale
    return total / len(actuals)


def owa_scalar(s, m, ns, nm):
    return (s / ns + m / nm) / 2.0


def r05_loop(forecasts, actuals):
    num = den = 0.0
    for f_row, y_row in zip(forecasts, actuals):
        for f, y in zip(f_row, y_row):
            num += abs(y - f)
            den += abs(y)
    return num / den


# -- attention and transformer ------------------------------------------------
def rotate_loop(vec, pos):
    d = len(vec)
    out = [0.0] * d
    for i in range(d // 2):
        theta = pos * 10000.0 ** (-2.0 * i / d)
        c, s = math.cos(theta), math.sin(theta)
        a, b = vec[2 * i], vec[2 * i + 1]
        out[2 * i] = a * c - b * s
        out[2 * i + 1] = a * s + b * c
    return out


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def matvec_rows(x_rows, w):
    """Each row of x (lists) times matrix w (nested lists)."""
    n_out = len(w[0])
    return [[sum(row[i] * w[i][j] for i in range(len(row))) for j in range(n_out)] for row in x_rows]


def attention_scores_loop(q_rows, k_rows):
    """Masked, scaled score matrix with None above the diagonal."""
    d = len(q_rows[0])
    n = len(q_rows)
    return [[dot(q_rows[t], k_rows[s]) / math.sqrt(d) if s <= t else None for s in range(n)] for t in range(n)]


def attention_loop(q_rows, k_rows, v_rows):
    scores = attention_scores_loop(q_rows, k_rows)
    out = []
    for t, row in enumerate(scores):
        valid = [v for v in row if v is not None]
        m = max(valid)
        w = [math.exp(v - m) for v in valid]
        z = sum(w)
        out.append([sum(w[s] / z * v_rows[s][j] for s in range(len(w))) for j in range(len(v_rows[0]))])
    return out


def single_head_rezero_layer_loop(x_rows, p, rotary=True):
    """One ReZero layer with a single head, from nested lists and scalar math.

    ``p`` maps wq/wk/wv/wo/w1/b1/w2/b2 to nested lists and alpha to a float.
    """
    q = matvec_rows(x_rows, p["wq"])
    k = matvec_rows(x_rows, p["wk"])
    v = matvec_rows(x_rows, p["wv"])
    if rotary:
        q = [rotate_loop(r, t) for t, r in enumerate(q)]
        k = [rotate_loop(r, t) for t, r in enumerate(k)]
    att = matvec_rows(attention_loop(q, k, v), p["wo"])
    h = [[a + p["alpha"] * b for a, b in zip(xr, ar)] for xr, ar in zip(x_rows, att)]
    hid = matvec_rows(h, p["w1"])
    hid = [[max(0.0, a + b) for a, b in zip(r, p["b1"])] for r in hid]
    ff = matvec_rows(hid, p["w2"])
    ff = [[a + b for a, b in zip(r, p["b2"])] for r in ff]
    return [[a + p["alpha"] * b for a, b in zip(hr, fr)] for hr, fr in zip(h, ff)]


def layer_norm_loop(row, eps=1e-5):
    mu = sum(row) / len(row)
    var = sum((v - mu) ** 2 for v in row) / len(row)
    return [(v - mu) / math.sqrt(var + eps) for v in row]


# -- optimizer ----------------------------------------------------------------
def lamb_scalar(w, g, m, v, step, lr=1e-3, b1=0.9, b2=0.999, eps=1e-6, wd=0.0):
    """One Lamb step for a single scalar weight; returns (w, m, v)."""
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** step)
    v_hat = v / (1 - b2 ** step)
    u = m_hat / (math.sqrt(v_hat) + eps) + wd * w
    ratio = abs(w) / abs(u) if w != 0 and u != 0 else 1.0
    return w - lr * ratio * u, m, v
