"""Explicit-loop kernels compiled with numba.

Signatures match ``_numpy``. Without numba these still run as plain Python
(slowly); the dispatcher never selects them in that case.
"""
import numpy as np

from .._accel import njit


@njit(cache=True)
def accumulate_counts(row, col, slot, n_rows, n_cols, n_slots):
    counts = np.zeros((n_rows, n_cols, n_slots), dtype=np.int64)
    dropped = 0
    for n in range(row.shape[0]):
        r, c, s = row[n], col[n], slot[n]
        if 0 <= r < n_rows and 0 <= c < n_cols and 0 <= s < n_slots:
            counts[r, c, s] += 1
        else:
            dropped += 1
    return counts, dropped


@njit(cache=True)
def _ring(k):
    n = 1 if k == 0 else 4 * k
    off = np.empty((n, 2), dtype=np.int64)
    m = 0
    for di in range(-k, k + 1):
        dj = k - abs(di)
        off[m, 0] = di
        off[m, 1] = -dj
        m += 1
        if dj > 0:
            off[m, 0] = di
            off[m, 1] = dj
            m += 1
    return off


@njit(cache=True)
def ring_corr(field, k):
    n_t, n_r, n_c = field.shape
    off = _ring(k)
    num = np.zeros(n_t)
    den = np.zeros(n_t)
    any_pair = False
    for t in range(n_t):
        s = 0.0
        for i in range(n_r):
            for j in range(n_c):
                s += field[t, i, j]
        mean = s / (n_r * n_c)
        d2 = 0.0
        acc = 0.0
        for i in range(n_r):
            for j in range(n_c):
                dij = field[t, i, j] - mean
                d2 += dij * dij
                ps = 0.0
                cnt = 0
                for m in range(off.shape[0]):
                    ii = i + off[m, 0]
                    jj = j + off[m, 1]
                    if 0 <= ii < n_r and 0 <= jj < n_c:
                        ps += field[t, ii, jj] - mean
                        cnt += 1
                if cnt > 0:
                    any_pair = True
                    acc += dij * (ps / cnt)
        num[t] = acc
        den[t] = d2
    return num, den, any_pair


@njit(cache=True)
def poisson_small(lam, p0, u):
    out = np.zeros(lam.shape[0], dtype=np.int64)
    for n in range(lam.shape[0]):
        k = 0
        p = p0[n]
        cdf = p
        while u[n] > cdf and p > 0.0:
            k += 1
            p *= lam[n] / k
            cdf += p
        out[n] = k
    return out


# exp-based forms: scalar libm tanh is several times slower than exp here

@njit(cache=True)
def _sig(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _tanh(z):
    e = np.exp(-2.0 * abs(z))
    v = (1.0 - e) / (1.0 + e)
    return v if z >= 0.0 else -v


@njit(cache=True)
def _rowdot(h, ut):
    # each output element summed over k in a fixed order, independent of batch
    n_b, n_k = h.shape
    n_o = ut.shape[1]
    out = np.zeros((n_b, n_o))
    for b in range(n_b):
        for kk in range(n_k):
            hv = h[b, kk]
            for o in range(n_o):
                out[b, o] += hv * ut[kk, o]
    return out


@njit(cache=True)
def lstm_recurrence(xw, ut, h0, c0, stable):
    n_t, n_b, g4 = xw.shape
    n_h = g4 // 4
    hs = np.empty((n_t, n_b, n_h))
    cs = np.empty((n_t, n_b, n_h))
    gates = np.empty((n_t, n_b, g4))
    tanh_c = np.empty((n_t, n_b, n_h))
    h = h0.copy()
    c = c0.copy()
    for t in range(n_t):
        if stable:
            rec = _rowdot(h, ut)
        else:
            rec = np.dot(h, ut)
        for b in range(n_b):
            for u in range(n_h):
                zi = xw[t, b, u] + rec[b, u]
                zf = xw[t, b, n_h + u] + rec[b, n_h + u]
                zg = xw[t, b, 2 * n_h + u] + rec[b, 2 * n_h + u]
                zo = xw[t, b, 3 * n_h + u] + rec[b, 3 * n_h + u]
                gi = _sig(zi)
                gf = _sig(zf)
                gg = _tanh(zg)
                go = _sig(zo)
                cv = gf * c[b, u] + gi * gg
                tc = _tanh(cv)
                c[b, u] = cv
                h[b, u] = go * tc
                gates[t, b, u] = gi
                gates[t, b, n_h + u] = gf
                gates[t, b, 2 * n_h + u] = gg
                gates[t, b, 3 * n_h + u] = go
                cs[t, b, u] = cv
                tanh_c[t, b, u] = tc
                hs[t, b, u] = go * tc
    return hs, cs, gates, tanh_c


@njit(cache=True)
def lstm_recurrence_backward(dhs, gates, cs, tanh_c, c0, u):
    n_t, n_b, n_h = dhs.shape
    dz = np.empty((n_t, n_b, 4 * n_h))
    dh_next = np.zeros((n_b, n_h))
    dc_next = np.zeros((n_b, n_h))
    for t in range(n_t - 1, -1, -1):
        for b in range(n_b):
            for k in range(n_h):
                i = gates[t, b, k]
                f = gates[t, b, n_h + k]
                g = gates[t, b, 2 * n_h + k]
                o = gates[t, b, 3 * n_h + k]
                tc = tanh_c[t, b, k]
                c_prev = cs[t - 1, b, k] if t > 0 else c0[b, k]
                dh = dhs[t, b, k] + dh_next[b, k]
                dc = dc_next[b, k] + dh * o * (1.0 - tc * tc)
                dz[t, b, k] = dc * g * i * (1.0 - i)
                dz[t, b, n_h + k] = dc * c_prev * f * (1.0 - f)
                dz[t, b, 2 * n_h + k] = dc * i * (1.0 - g * g)
                dz[t, b, 3 * n_h + k] = dh * tc * o * (1.0 - o)
                dc_next[b, k] = dc * f
        dh_next = np.dot(np.ascontiguousarray(dz[t]), u)
    return dz, dh_next, dc_next


@njit(cache=True)
def best_split(x, y, min_leaf):
    n, n_f = x.shape
    best_f = -1
    best_thr = 0.0
    best_score = -np.inf
    if n < 2 * min_leaf or n < 2:
        return best_f, best_thr, best_score
    for f in range(n_f):
        col = x[:, f].copy()
        order = np.argsort(col, kind="mergesort")
        xs = col[order]
        ys = y[order]
        csum = np.cumsum(ys)
        total = csum[n - 1]
        for p in range(n - 1):
            pos = p + 1
            if pos < min_leaf or pos > n - min_leaf:
                continue
            if not xs[p + 1] > xs[p]:
                continue
            sl = csum[p]
            sr = total - sl
            nl = float(pos)
            nr = float(n - pos)
            score = sl * sl / nl + sr * sr / nr
            if score > best_score:
                best_score = score
                best_f = f
                thr = 0.5 * (xs[p] + xs[p + 1])
                if thr >= xs[p + 1]:
                    thr = xs[p]
                best_thr = thr
    return best_f, best_thr, best_score


@njit(cache=True)
def lasso_cd(x, y, lam, max_iter, tol, w):
    n, p = x.shape
    w = w.copy()
    col_sq = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += x[i, j] * x[i, j]
        col_sq[j] = s / n
    r = y.copy()
    for i in range(n):
        for j in range(p):
            r[i] -= x[i, j] * w[j]
    delta = np.inf
    it = 0
    while it < max_iter:
        it += 1
        delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            s = 0.0
            for i in range(n):
                s += x[i, j] * r[i]
            rho = s / n + col_sq[j] * w[j]
            mag = abs(rho) - lam
            new = 0.0
            if mag > 0.0:
                new = np.sign(rho) * mag / col_sq[j]
            d = new - w[j]
            if d != 0.0:
                for i in range(n):
                    r[i] -= d * x[i, j]
                w[j] = new
                delta = max(delta, abs(d))
        if delta < tol:
            break
    return w, it, delta


@njit(cache=True)
def arma_filter(y, intercept, phi, theta, start):
    n_s, n_t = y.shape
    p = phi.shape[1]
    q = theta.shape[1]
    pred = np.full((n_s, n_t), np.nan)
    err = np.zeros((n_s, n_t))
    for s in range(n_s):
        for t in range(start, n_t):
            v = intercept[s]
            for i in range(p):
                v += phi[s, i] * y[s, t - 1 - i]
            for j in range(q):
                v += theta[s, j] * err[s, t - 1 - j]
            pred[s, t] = v
            err[s, t] = y[s, t] - v
    return pred, err
