"""Vectorised NumPy implementations of the hot loops.

Each function mirrors the signature of its counterpart in ``_loops`` and
returns the same quantities. Integer outputs (counts, split choices) agree
exactly between backends; float outputs agree to rounding.
"""
import numpy as np


def accumulate_counts(row, col, slot, n_rows, n_cols, n_slots):
    inside = (
        (row >= 0) & (row < n_rows)
        & (col >= 0) & (col < n_cols)
        & (slot >= 0) & (slot < n_slots)
    )
    flat = (row[inside] * n_cols + col[inside]) * n_slots + slot[inside]
    size = n_rows * n_cols * n_slots
    counts = np.bincount(flat, minlength=size).astype(np.int64)
    return counts.reshape(n_rows, n_cols, n_slots), int(inside.size - inside.sum())


def ring_offsets(k):
    """Grid offsets at Manhattan distance exactly ``k`` in a fixed order."""
    out = []
    for di in range(-k, k + 1):
        dj = k - abs(di)
        out.append((di, -dj))
        if dj > 0:
            out.append((di, dj))
    return out


def ring_corr(field, k):
    """Numerator and denominator of the ring-averaged spatial correlation.

    ``field`` is time-major, shape (T, R, C).
    """
    n_t, n_r, n_c = field.shape
    mean = field.sum(axis=(1, 2)) / (n_r * n_c)
    dev = field - mean[:, None, None]
    den = (dev * dev).sum(axis=(1, 2))
    acc = np.zeros_like(dev)
    cnt = np.zeros((n_r, n_c))
    for di, dj in ring_offsets(k):
        r0, r1 = max(0, -di), min(n_r, n_r - di)
        c0, c1 = max(0, -dj), min(n_c, n_c - dj)
        if r0 >= r1 or c0 >= c1:
            continue
        acc[:, r0:r1, c0:c1] += dev[:, r0 + di:r1 + di, c0 + dj:c1 + dj]
        cnt[r0:r1, c0:c1] += 1.0
    has = cnt > 0
    if not has.any():
        return np.zeros(n_t), den, False
    part = np.where(has, acc / np.where(has, cnt, 1.0), 0.0)
    num = (dev * part).sum(axis=(1, 2))
    return num, den, True


def poisson_small(lam, p0, u):
    """Poisson draws by sequential inversion of the CDF.

    ``p0`` must hold ``exp(-lam)``; the recursion itself is pure arithmetic
    so both backends produce identical counts.
    """
    lam = np.asarray(lam, dtype=np.float64)
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.array(p0, dtype=np.float64)
    cdf = p.copy()
    active = u > cdf
    step = 0
    while active.any():
        step += 1
        idx = np.nonzero(active)[0]
        p[idx] *= lam[idx] / step
        cdf[idx] += p[idx]
        k[idx] += 1
        active[idx] = (u[idx] > cdf[idx]) & (p[idx] > 0.0)
    return k


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_recurrence(xw, ut, h0, c0, stable):
    """Run the gate recursion given the precomputed input projections.

    xw : (T, B, 4H) input projection plus bias, gate order i, f, g, o.
    ut : (H, 4H) transposed recurrent matrix.
    stable : use a row-independent product so results do not depend on the
        batch composition.
    """
    n_t, n_b, g4 = xw.shape
    n_h = g4 // 4
    hs = np.empty((n_t, n_b, n_h))
    cs = np.empty((n_t, n_b, n_h))
    gates = np.empty((n_t, n_b, g4))
    tanh_c = np.empty((n_t, n_b, n_h))
    h, c = h0, c0
    for t in range(n_t):
        if stable:
            z = xw[t] + np.einsum("bk,kn->bn", h, ut)
        else:
            z = xw[t] + h @ ut
        ifo = _sig(z[:, :2 * n_h])
        o = _sig(z[:, 3 * n_h:])
        g = np.tanh(z[:, 2 * n_h:3 * n_h])
        c = ifo[:, n_h:] * c + ifo[:, :n_h] * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, :, :2 * n_h] = ifo
        gates[t, :, 2 * n_h:3 * n_h] = g
        gates[t, :, 3 * n_h:] = o
        cs[t] = c
        tanh_c[t] = tc
        hs[t] = h
    return hs, cs, gates, tanh_c


def lstm_recurrence_backward(dhs, gates, cs, tanh_c, c0, u):
    """Backpropagate through the recursion; returns d(pre-activation), dh0, dc0."""
    n_t, n_b, n_h = dhs.shape
    dz = np.empty((n_t, n_b, 4 * n_h))
    dh_next = np.zeros((n_b, n_h))
    dc_next = np.zeros((n_b, n_h))
    for t in range(n_t - 1, -1, -1):
        i = gates[t, :, :n_h]
        f = gates[t, :, n_h:2 * n_h]
        g = gates[t, :, 2 * n_h:3 * n_h]
        o = gates[t, :, 3 * n_h:]
        tc = tanh_c[t]
        c_prev = cs[t - 1] if t > 0 else c0
        dh = dhs[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[t, :, :n_h] = dc * g * i * (1.0 - i)
        dz[t, :, n_h:2 * n_h] = dc * c_prev * f * (1.0 - f)
        dz[t, :, 2 * n_h:3 * n_h] = dc * i * (1.0 - g * g)
        dz[t, :, 3 * n_h:] = dh * tc * o * (1.0 - o)
        dh_next = dz[t] @ u
        dc_next = dc * f
    return dz, dh_next, dc_next


def best_split(x, y, min_leaf):
    """Exhaustive CART split search.

    Returns (feature, threshold, score) maximising
    ``S_left**2 / n_left + S_right**2 / n_right``; feature is -1 when no
    admissible split exists. Ties go to the lowest feature, then the lowest
    threshold.
    """
    n, n_f = x.shape
    if n < 2 * min_leaf or n < 2:
        return -1, 0.0, -np.inf
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    total = csum[-1]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    s_left = csum[:-1]
    s_right = total[None, :] - s_left
    score = s_left * s_left / n_left + s_right * s_right / n_right
    pos = np.arange(1, n)[:, None]
    valid = (xs[1:] > xs[:-1]) & (pos >= min_leaf) & (pos <= n - min_leaf)
    score = np.where(valid, score, -np.inf)
    flat = score.T.ravel()
    best = int(np.argmax(flat))
    if not np.isfinite(flat[best]):
        return -1, 0.0, -np.inf
    f, p = divmod(best, n - 1)
    lo, hi = xs[p, f], xs[p + 1, f]
    thr = 0.5 * (lo + hi)
    if thr >= hi:
        thr = lo
    return f, float(thr), float(flat[best])


def lasso_cd(x, y, lam, max_iter, tol, w):
    """Cyclic coordinate descent for (1/2n)||y - Xw||^2 + lam*||w||_1.

    ``x`` columns are standardised and ``y`` centred by the caller. Returns
    (w, sweeps, last max |dw|).
    """
    n, p = x.shape
    w = w.copy()
    col_sq = (x * x).sum(axis=0) / n
    r = y - x @ w
    delta = np.inf
    it = 0
    while it < max_iter:
        it += 1
        delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            xj = x[:, j]
            rho = xj @ r / n + col_sq[j] * w[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            d = new - w[j]
            if d != 0.0:
                r -= d * xj
                w[j] = new
                delta = max(delta, abs(d))
        if delta < tol:
            break
    return w, it, delta


def arma_filter(y, intercept, phi, theta, start):
    """One-step ARMA predictions and innovations for many series at once.

    y : (S, T); intercept : (S,); phi : (S, p); theta : (S, q).
    Slots before ``start`` get prediction NaN and innovation 0.
    """
    n_s, n_t = y.shape
    p, q = phi.shape[1], theta.shape[1]
    pred = np.full((n_s, n_t), np.nan)
    err = np.zeros((n_s, n_t))
    for t in range(start, n_t):
        v = intercept.copy()
        for i in range(p):
            v += phi[:, i] * y[:, t - 1 - i]
        for j in range(q):
            v += theta[:, j] * err[:, t - 1 - j]
        pred[:, t] = v
        err[:, t] = y[:, t] - v
    return pred, err
