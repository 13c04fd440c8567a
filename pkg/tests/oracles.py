"""Independent reference implementations shared by the unit and acceptance tests.

Everything here is written for clarity over speed and avoids the package's
kernels, so agreement with the package is a real check.
"""
import math

import numpy as np

from tarisk import nn

GRAD_SETUP = dict(lstm_sizes=(3, 4, 4, 4), dense_size=5, seq_len=6)


def brute_corr(field, k):
    """Explicit pair enumeration over every ordered cell pair at distance k."""
    n_r, n_c = field.shape
    cells = [(i, j) for i in range(n_r) for j in range(n_c)]
    mean = sum(field[c] for c in cells) / len(cells)
    den = sum((field[c] - mean) ** 2 for c in cells)
    num = 0.0
    any_pair = False
    for a in cells:
        prods = [(field[a] - mean) * (field[b] - mean) for b in cells
                 if abs(a[0] - b[0]) + abs(a[1] - b[1]) == k]
        if prods:
            any_pair = True
            num += sum(prods) / len(prods)
    if den == 0 or not any_pair:
        return None
    return num / den


def brute_autocorr(x, tau):
    ok = [i for i, v in enumerate(x) if not math.isnan(v)]
    mean = sum(x[i] for i in ok) / len(ok)
    den = sum((x[i] - mean) ** 2 for i in ok)
    pairs = [(i, i + tau) for i in ok if i + tau < len(x) and not math.isnan(x[i + tau])]
    if den == 0 or not pairs:
        return None
    return sum((x[i] - mean) * (x[j] - mean) for i, j in pairs) / den


def hadamard(n):
    h = np.array([[1.0]])
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


def soft(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def split_candidates(x, y, min_leaf):
    """Every admissible (sse, feature, midpoint threshold), by exhaustive search."""
    out = []
    for f in range(x.shape[1]):
        vals = np.unique(x[:, f])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = (lo + hi) / 2
            left = x[:, f] <= thr
            nl = left.sum()
            if nl < min_leaf or len(y) - nl < min_leaf:
                continue
            sse = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
            out.append((sse, f, thr))
    return out


def brute_split(x, y, min_leaf):
    """Lowest-SSE split; ties within 1e-9 go to the lowest feature, then threshold."""
    cands = split_candidates(x, y, min_leaf)
    if not cands:
        return np.inf, -1, 0.0
    best = min(c[0] for c in cands)
    return next(c for c in cands if c[0] <= best + 1e-9)


def brute_tree_predict(x, y, q, depth, max_depth, min_leaf):
    if depth >= max_depth or len(y) < 2 * min_leaf or np.all(y == y[0]):
        return np.full(len(q), y.mean())
    sse, f, thr = brute_split(x, y, min_leaf)
    if f < 0 or not sse < ((y - y.mean()) ** 2).sum() - 1e-12:
        return np.full(len(q), y.mean())
    out = np.empty(len(q))
    lq = q[:, f] <= thr
    lx = x[:, f] <= thr
    out[lq] = brute_tree_predict(x[lx], y[lx], q[lq], depth + 1, max_depth, min_leaf)
    out[~lq] = brute_tree_predict(x[~lx], y[~lx], q[~lq], depth + 1, max_depth, min_leaf)
    return out


def ar1_series(n, phi, c=0.0, seed=0):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n + 200)
    y = np.zeros(n + 200)
    for t in range(1, n + 200):
        y[t] = c + phi * y[t - 1] + e[t]
    return y[200:]


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def naive_lstm(W, U, b, x):
    """Textbook per-sample LSTM used as an oracle. x: (T, in)."""
    n_h = U.shape[1]
    h = np.zeros(n_h)
    c = np.zeros(n_h)
    out = []
    for xt in x:
        z = W @ xt + U @ h + b
        i, f, g, o = z[:n_h], z[n_h:2 * n_h], z[2 * n_h:3 * n_h], z[3 * n_h:]
        c = _sigmoid(f) * c + _sigmoid(i) * np.tanh(g)
        h = _sigmoid(o) * np.tanh(c)
        out.append(h)
    return np.array(out)


def naive_predict(model, seq, coord):
    p = model.params
    x = seq[:, None]
    for l in range(len(model.lstm_sizes)):
        x = naive_lstm(p[f"lstm{l}.W"], p[f"lstm{l}.U"], p[f"lstm{l}.b"], x)
    a = np.concatenate([x[-1], coord])
    for j in range(model.n_dense):
        a = np.maximum(p[f"dense{j}.W"] @ a + p[f"dense{j}.b"], 0.0)
    return max(float(p["out.W"][0] @ a + p["out.b"][0]), 0.0)


def fd_check(model, seq, co, y, masks, step=1e-5):
    def loss():
        pred, _ = nn.forward(model, seq, co, train=True, masks=masks)
        return nn.mse_loss(pred, y)[0]

    pred, cache = nn.forward(model, seq, co, train=True, masks=masks)
    _, dpred = nn.mse_loss(pred, y)
    grads = nn.backward(model, cache, dpred)
    worst = {}
    for name, p in model.params.items():
        num = np.empty_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + step
            lp = loss()
            p[i] = old - step
            lm = loss()
            p[i] = old
            num[i] = (lp - lm) / (2 * step)
        a = grads[name]
        rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
        worst[name] = float(rel.max())
    return worst


def gradient_fixture(seed=5):
    """The tiny model (hidden 3,4,4,4, dense 5, L=6) with explicit dropout masks and no ReLU kinks near zero."""
    rng = np.random.default_rng(seed)
    model = nn.TarpmlModel.initialize(rng, **GRAD_SETUP)
    seq, co, y = rng.random((4, 6)), rng.random((4, 2)), rng.random(4)
    masks = [(rng.random((4, 5)) >= 0.5) / 0.5 for _ in range(model.n_dense - 1)]
    _, cache = nn.forward(model, seq, co, train=True, masks=masks)
    margin = min(np.abs(z).min() for z in cache["pre"] + [cache["zo"]])
    return model, seq, co, y, masks, margin


def naive_metrics(r, p):
    n = len(r)
    mae = sum(abs(a - b) for a, b in zip(r, p)) / n
    mse = sum((a - b) ** 2 for a, b in zip(r, p)) / n
    return mae, mse, math.sqrt(mse)
