"""Comparison regressors: Lasso, linear epsilon-SVR, CART, ARMA, and a
24-hour historical-average reference.

Lasso, SVR and the tree consume the flat sample features (sequence values
followed by the two coordinates). ARMA and the historical average work on
each cell's hourly risk series and keep that series as context so they can
produce one-step forecasts for any sample slot.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, kernels
from .ingest import FormatError
from .risk import HOURS_PER_DAY, RiskCube

log = logging.getLogger(__name__)


def _standardize(x):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    return (x - mu) / scale, mu, scale, sd > 0


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    kind: str  # "lasso" or "svr"
    seq_len: int = 0
    hyper: dict = field(default_factory=dict)

    def predict_features(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def predict(self, store, idx=None) -> np.ndarray:
        return self.predict_features(store.features(idx))


def fit_lasso(x, y, lam=0.01, max_iter=1000, tol=1e-6) -> LinearModel:
    """Cyclic coordinate descent on standardised features.

    Minimises (1/2n)||y - Xw - b||^2 + lam*||w||_1 in the standardised
    space; the returned weights are mapped back to raw feature units.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] < 1:
        raise ValueError("lasso needs at least one sample")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    xs, mu, scale, live = _standardize(x)
    xs[:, ~live] = 0.0
    ybar = y.mean()
    w, it, delta = kernels.lasso_cd(np.ascontiguousarray(xs), y - ybar, float(lam), int(max_iter),
                                    float(tol), np.zeros(x.shape[1]))
    if delta >= tol:
        warnings.warn(f"lasso did not converge in {max_iter} sweeps (max change {delta:.3g})",
                      RuntimeWarning, stacklevel=2)
    w_raw = np.where(live, w / scale, 0.0)
    bias = float(ybar - w_raw @ mu)
    return LinearModel(w_raw, bias, "lasso", hyper={"lambda": lam, "iterations": int(it)})


def fit_svr_linear(x, y, c=1.0, epsilon=0.01, epochs=50, lr=0.01, batch_size=64, seed=0) -> LinearModel:
    """Linear epsilon-insensitive regression by mini-batch subgradient descent.

    Objective (divided by n): ||w||^2 / (2n) + C * mean(max(0, |y - w.x - b| - eps)).
    Starts from w = 0, b = mean(y); step size decays as lr / sqrt(step).
    The averaged iterate of the last epoch is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n < 1:
        raise ValueError("svr needs at least one sample")
    xs, mu, scale, live = _standardize(x)
    rng = np.random.default_rng(seed)
    w = np.zeros(x.shape[1])
    b = float(y.mean())
    step = 0
    for _ in range(epochs):
        perm = rng.permutation(n)
        w_sum, b_sum, k = np.zeros_like(w), 0.0, 0
        for s in range(0, n, batch_size):
            idx = perm[s:s + batch_size]
            r = y[idx] - xs[idx] @ w - b
            sgn = np.where(r > epsilon, 1.0, np.where(r < -epsilon, -1.0, 0.0))
            gw = w / n - c * (sgn @ xs[idx]) / idx.size
            gb = -c * sgn.mean()
            step += 1
            eta = lr / math.sqrt(step)
            w = w - eta * gw
            b = b - eta * gb
            w_sum += w
            b_sum += b
            k += 1
        w, b = w_sum / k, b_sum / k
        if not (np.isfinite(w).all() and math.isfinite(b)):
            raise FloatingPointError("svr diverged")
    w_raw = np.where(live, w / scale, 0.0)
    return LinearModel(w_raw, float(b - w_raw @ mu), "svr",
                       hyper={"C": c, "epsilon": epsilon, "epochs": epochs, "lr": lr})


@dataclass
class RegressionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    max_depth: int
    min_samples_leaf: int
    seq_len: int = 0

    def apply(self, x) -> np.ndarray:
        """Leaf index reached by each row."""
        x = np.asarray(x, dtype=np.float64)
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            rows = np.nonzero(inner)[0]
            go_left = x[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict_features(self, x) -> np.ndarray:
        return self.value[self.apply(x)]

    def predict(self, store, idx=None) -> np.ndarray:
        return self.predict_features(store.features(idx))

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())


def fit_tree(x, y, max_depth=12, min_samples_leaf=5) -> RegressionTree:
    """Greedy CART with exhaustive midpoint search (depth-first node order)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.shape[0] < max(min_samples_leaf, 1):
        raise ValueError("fewer samples than min_samples_leaf")
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        yy = y[idx]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(yy.mean()))
        count.append(idx.size)
        if depth >= max_depth or idx.size < 2 * min_samples_leaf or np.all(yy == yy[0]):
            return node
        f, thr, score = kernels.best_split(np.ascontiguousarray(x[idx]), np.ascontiguousarray(yy),
                                           min_samples_leaf)
        parent = yy.sum() ** 2 / idx.size
        if f < 0 or not score > parent:
            return node
        mask = x[idx, f] <= thr
        feature[node] = int(f)
        threshold[node] = float(thr)
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(x.shape[0]), 0)
    return RegressionTree(
        np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64), np.array(value), np.array(count, dtype=np.int64),
        max_depth, min_samples_leaf,
    )


def _lstsq_ridge(a, b, what):
    """Least squares; falls back to a 1e-8 ridge when the normal matrix is singular."""
    ata = a.T @ a
    atb = a.T @ b
    try:
        if np.linalg.cond(ata) > 1e12:
            raise np.linalg.LinAlgError
        return np.linalg.solve(ata, atb)
    except np.linalg.LinAlgError:
        warnings.warn(f"{what}: singular regression, ridge-stabilised", RuntimeWarning, stacklevel=3)
        return np.linalg.solve(ata + 1e-8 * np.eye(ata.shape[0]), atb)


def _lag_matrix(y, lags, start):
    """Columns y[t-1], ..., y[t-lags] for t = start..n-1."""
    n = y.size
    return np.column_stack([y[start - i:n - i] for i in range(1, lags + 1)]) if lags else np.empty((n - start, 0))


def hannan_rissanen(y, p, q, long_order=None):
    """Two-stage least-squares ARMA(p, q) fit with intercept.

    Stage 1 fits a long autoregression to proxy the innovations; stage 2
    regresses the series on its own p lags and q lagged innovations.
    Returns (intercept, phi, theta).
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n <= 10 * (p + q + 1):
        raise ValueError(f"series of length {n} too short for ARMA({p},{q})")
    if np.all(y == y[0]):
        return float(y[0]), np.zeros(p), np.zeros(q)
    if q == 0:
        a = np.column_stack([np.ones(n - p), _lag_matrix(y, p, p)])
        coef = _lstsq_ridge(a, y[p:], "ARMA")
        return float(coef[0]), coef[1:], np.zeros(0)
    m = long_order or max(p + q, min(int(math.ceil(10 * math.log10(n))), n // 4))
    a = np.column_stack([np.ones(n - m), _lag_matrix(y, m, m)])
    coef = _lstsq_ridge(a, y[m:], "ARMA long AR")
    resid = np.zeros(n)
    resid[m:] = y[m:] - a @ coef
    start = m + q
    cols = [np.ones(n - start), _lag_matrix(y, p, start)]
    cols.append(np.column_stack([resid[start - j:n - j] for j in range(1, q + 1)]))
    a2 = np.column_stack(cols)
    coef2 = _lstsq_ridge(a2, y[start:], "ARMA")
    return float(coef2[0]), coef2[1:1 + p], coef2[1 + p:]


@dataclass
class ArmaModel:
    """Per-cell ARMA(p, q) with the cell series kept for forecasting."""

    p: int
    q: int
    intercept: np.ndarray  # (cells,)
    phi: np.ndarray  # (cells, p)
    theta: np.ndarray  # (cells, q)
    series: np.ndarray  # (cells, T); NaN where risk is undefined
    n_cols: int
    first_slot: int
    forecasts: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.forecasts is None:
            self.forecasts = self._forecast()

    def _forecast(self):
        start = max(self.p, self.q)
        y = np.ascontiguousarray(np.nan_to_num(self.series[:, self.first_slot:]))
        pred, _ = kernels.arma_filter(y, np.ascontiguousarray(self.intercept),
                                      np.ascontiguousarray(self.phi), np.ascontiguousarray(self.theta),
                                      start)
        out = np.full(self.series.shape, np.nan)
        out[:, self.first_slot:] = pred
        return out

    def predict_at(self, rows, cols, slots) -> np.ndarray:
        return self.forecasts[np.asarray(rows) * self.n_cols + np.asarray(cols), np.asarray(slots)]

    def predict(self, store, idx=None) -> np.ndarray:
        sel = slice(None) if idx is None else idx
        return self.predict_at(store.rows[sel], store.cols[sel], store.slots[sel])


def _cell_series(risk: RiskCube):
    n_r, n_c, n_t = risk.values.shape
    return risk.values.reshape(n_r * n_c, n_t)


def fit_arma(risk: RiskCube, fit_end_slot: int, p=24, q=1) -> ArmaModel:
    """Fit one ARMA per cell on defined risk values before ``fit_end_slot``."""
    series = _cell_series(risk)
    first = risk.first_defined
    n_cells = series.shape[0]
    inter = np.zeros(n_cells)
    phi = np.zeros((n_cells, p))
    theta = np.zeros((n_cells, q))
    for cell in range(n_cells):
        c, ph, th = hannan_rissanen(series[cell, first:fit_end_slot], p, q)
        inter[cell], phi[cell], theta[cell] = c, ph, th
    return ArmaModel(p, q, inter, phi, theta, series.copy(), risk.values.shape[1], first)


@dataclass
class HistoricalAverage:
    """Predicts the risk observed 24 hours earlier in the same cell."""

    series: np.ndarray  # (cells, T)
    n_cols: int

    def predict_at(self, rows, cols, slots) -> np.ndarray:
        slots = np.asarray(slots)
        src = slots - HOURS_PER_DAY
        cell = np.asarray(rows) * self.n_cols + np.asarray(cols)
        out = np.full(slots.shape, np.nan)
        ok = src >= 0
        out[ok] = self.series[cell[ok], src[ok]]
        return out

    def predict(self, store, idx=None) -> np.ndarray:
        sel = slice(None) if idx is None else idx
        return self.predict_at(store.rows[sel], store.cols[sel], store.slots[sel])


def historical_average(risk: RiskCube) -> HistoricalAverage:
    return HistoricalAverage(_cell_series(risk).copy(), risk.values.shape[1])


# -- persistence -----------------------------------------------------------

def to_container(model):
    """(kind, hyper, tensors) for any baseline."""
    if isinstance(model, LinearModel):
        return model.kind, {"seq_len": model.seq_len, **model.hyper}, {
            "weights": model.weights, "bias": np.array([model.bias])}
    if isinstance(model, RegressionTree):
        return "dtr", {"max_depth": model.max_depth, "min_samples_leaf": model.min_samples_leaf,
                       "seq_len": model.seq_len}, {
            "feature": model.feature, "threshold": model.threshold, "left": model.left,
            "right": model.right, "value": model.value, "n_samples": model.n_samples}
    if isinstance(model, ArmaModel):
        return "arma", {"p": model.p, "q": model.q, "n_cols": model.n_cols,
                        "first_slot": model.first_slot}, {
            "intercept": model.intercept, "phi": model.phi, "theta": model.theta,
            "series": model.series}
    if isinstance(model, HistoricalAverage):
        return "havg", {"n_cols": model.n_cols}, {"series": model.series}
    raise TypeError(f"not a baseline model: {type(model).__name__}")


def from_container(kind, hyper, t):
    try:
        if kind in ("lasso", "svr"):
            h = dict(hyper)
            seq_len = h.pop("seq_len", 0)
            return LinearModel(t["weights"], float(t["bias"][0]), kind, seq_len, h)
        if kind == "dtr":
            ints = {k: t[k].astype(np.int64) for k in ("feature", "left", "right", "n_samples")}
            return RegressionTree(ints["feature"], t["threshold"], ints["left"], ints["right"],
                                  t["value"], ints["n_samples"], hyper["max_depth"],
                                  hyper["min_samples_leaf"], hyper.get("seq_len", 0))
        if kind == "arma":
            return ArmaModel(hyper["p"], hyper["q"], t["intercept"], t["phi"], t["theta"],
                             t["series"], hyper["n_cols"], hyper["first_slot"])
        if kind == "havg":
            return HistoricalAverage(t["series"], hyper["n_cols"])
    except KeyError as exc:
        raise FormatError(f"{kind} checkpoint missing field {exc}") from exc
    raise FormatError(f"unknown baseline kind {kind!r}")


def save_baseline(model, path, extra_hyper=None) -> None:
    kind, hyper, tensors = to_container(model)
    hyper = {**hyper, **(extra_hyper or {})}
    checkpoint.save(path, kind, hyper, tensors)
