"""Stacked-LSTM risk regressor written directly on NumPy.

Architecture: the risk sequence (one scalar per step) runs through a stack
of LSTM layers; the last layer's final hidden state is concatenated with the
cell's normalised coordinate and passed through ReLU dense layers, with
inverted dropout between consecutive dense layers, then a single ReLU
output unit. Trained on mean squared error with RMSProp.

Gate blocks are stored stacked in the order input, forget, candidate,
output: ``lstm{l}.W`` is (4H, in), ``lstm{l}.U`` is (4H, H), ``lstm{l}.b``
is (4H,).
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint, kernels
from .ingest import FormatError

log = logging.getLogger(__name__)

PAPER_LSTM_SIZES = (100, 200, 200, 200)
PAPER_DENSE_SIZE = 200
TINY_LSTM_SIZES = (16, 32, 32, 32)
TINY_DENSE_SIZE = 32


class TrainingError(RuntimeError):
    """Non-finite values appeared during training."""


class TrainingDiverged(TrainingError):
    def __init__(self, message, model=None, history=None):
        super().__init__(message)
        self.model = model
        self.history = history or []


def _glorot(rng, fan_in, fan_out, shape):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class TarpmlModel:
    lstm_sizes: tuple
    dense_size: int
    seq_len: int
    window_days: int = 3
    dropout_rate: float = 0.5
    n_dense: int = 3
    params: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.lstm_sizes = tuple(int(h) for h in self.lstm_sizes)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if not self.params:
            self.params = {k: np.zeros(s) for k, s in self.shapes().items()}
        for k, s in self.shapes().items():
            if k not in self.params or self.params[k].shape != s:
                raise ValueError(f"parameter {k} missing or not shaped {s}")

    def shapes(self) -> dict:
        out = {}
        n_in = 1
        for l, h in enumerate(self.lstm_sizes):
            out[f"lstm{l}.W"] = (4 * h, n_in)
            out[f"lstm{l}.U"] = (4 * h, h)
            out[f"lstm{l}.b"] = (4 * h,)
            n_in = h
        n_in += 2
        for j in range(self.n_dense):
            out[f"dense{j}.W"] = (self.dense_size, n_in)
            out[f"dense{j}.b"] = (self.dense_size,)
            n_in = self.dense_size
        out["out.W"] = (1, n_in)
        out["out.b"] = (1,)
        return out

    @classmethod
    def initialize(cls, rng, lstm_sizes=PAPER_LSTM_SIZES, dense_size=PAPER_DENSE_SIZE,
                   seq_len=100, **kw) -> "TarpmlModel":
        """Glorot-uniform input/dense weights, orthogonal recurrent blocks, forget bias 1.

        Output weights take the absolute value of their Glorot draw.
        """
        model = cls(lstm_sizes, dense_size, seq_len, **kw)
        p = model.params
        n_in = 1
        for l, h in enumerate(model.lstm_sizes):
            p[f"lstm{l}.W"] = np.vstack([_glorot(rng, n_in, h, (h, n_in)) for _ in range(4)])
            p[f"lstm{l}.U"] = np.vstack([_orthogonal(rng, h) for _ in range(4)])
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0
            p[f"lstm{l}.b"] = b
            n_in = h
        n_in += 2
        for j in range(model.n_dense):
            p[f"dense{j}.W"] = _glorot(rng, n_in, dense_size, (dense_size, n_in))
            n_in = dense_size
        # non-negative so the output ReLU is not dead at initialisation
        p["out.W"] = np.abs(_glorot(rng, n_in, 1, (1, n_in)))
        return model

    def copy(self) -> "TarpmlModel":
        return copy.deepcopy(self)

    def predict(self, store, idx=None) -> np.ndarray:
        sel = slice(None) if idx is None else idx
        return predict(self, store.sequences[sel], store.coords[sel])

    def hyper(self) -> dict:
        return {
            "lstm_sizes": list(self.lstm_sizes), "dense_size": self.dense_size,
            "seq_len": self.seq_len, "window_days": self.window_days,
            "dropout_rate": self.dropout_rate, "n_dense": self.n_dense,
        }


def _mm(a, w, stable):
    """a @ w.T, optionally with a row-independent summation order."""
    if stable:
        return np.einsum("...i,oi->...o", a, w)
    return a @ w.T


def lstm_forward(W, U, b, x, h0=None, c0=None, stable=False):
    """Run one LSTM layer over a time-major sequence.

    x : (T, in) or (T, B, in). Returns (hidden sequence, final h, final c,
    cache) with the hidden sequence shaped like ``x`` but with H features.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, None, :]
    n_t, n_b, n_in = x.shape
    n_h = U.shape[1]
    if W.shape != (4 * n_h, n_in) or U.shape != (4 * n_h, n_h) or b.shape != (4 * n_h,):
        raise ValueError(f"LSTM shapes inconsistent: W{W.shape} U{U.shape} b{b.shape} x{x.shape}")
    h0 = np.zeros((n_b, n_h)) if h0 is None else np.broadcast_to(h0, (n_b, n_h)).astype(np.float64)
    c0 = np.zeros((n_b, n_h)) if c0 is None else np.broadcast_to(c0, (n_b, n_h)).astype(np.float64)
    xw = np.ascontiguousarray(_mm(x, W, stable) + b)
    hs, cs, gates, tanh_c = kernels.lstm_recurrence(
        xw, np.ascontiguousarray(U.T), np.ascontiguousarray(h0), np.ascontiguousarray(c0), stable)
    if not np.isfinite(hs).all():
        raise TrainingError("non-finite LSTM activation")
    cache = {"x": x, "hs": hs, "cs": cs, "gates": gates, "tanh_c": tanh_c, "h0": h0, "c0": c0}
    h_last, c_last = hs[-1], cs[-1]
    if squeeze:
        return hs[:, 0], h_last[0], c_last[0], cache
    return hs, h_last, c_last, cache


def lstm_backward(W, U, cache, dhs):
    """Gradients of one layer given d(loss)/d(hidden sequence) of shape (T, B, H)."""
    x, hs = cache["x"], cache["hs"]
    dz, dh0, dc0 = kernels.lstm_recurrence_backward(
        np.ascontiguousarray(dhs), cache["gates"], cache["cs"], cache["tanh_c"],
        np.ascontiguousarray(cache["c0"]), np.ascontiguousarray(U))
    g4 = dz.shape[2]
    n_h = U.shape[1]
    flat = dz.reshape(-1, g4)
    dW = flat.T @ x.reshape(-1, x.shape[2])
    h_prev = np.concatenate([cache["h0"][None], hs[:-1]], axis=0)
    dU = flat.T @ h_prev.reshape(-1, n_h)
    db = flat.sum(axis=0)
    dx = dz @ W
    return dx, dW, dU, db


def forward(model: TarpmlModel, sequences, coords, train=False, rng=None, masks=None, stable=None):
    """Predict risk for a batch.

    sequences : (B, L); coords : (B, 2). In train mode dropout masks are
    drawn from ``rng`` unless given explicitly in ``masks``.
    Returns (predictions (B,), cache).
    """
    if stable is None:
        stable = not train
    seq = np.asarray(sequences, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != model.seq_len:
        raise ValueError(f"expected sequences of length {model.seq_len}, got shape {seq.shape}")
    p = model.params
    xs = np.ascontiguousarray(seq.T[:, :, None])
    lstm_caches = []
    for l in range(len(model.lstm_sizes)):
        xs, _, _, c = lstm_forward(p[f"lstm{l}.W"], p[f"lstm{l}.U"], p[f"lstm{l}.b"], xs, stable=stable)
        lstm_caches.append(c)
    a = np.hstack([xs[-1], np.asarray(coords, dtype=np.float64)])
    dense_in, pre, used_masks = [], [], []
    for j in range(model.n_dense):
        dense_in.append(a)
        z = _mm(a, p[f"dense{j}.W"], stable) + p[f"dense{j}.b"]
        pre.append(z)
        a = np.maximum(z, 0.0)
        mask = None
        if train and j < model.n_dense - 1 and model.dropout_rate > 0:
            if masks is not None:
                mask = masks[j]
            else:
                keep = rng.random(a.shape) >= model.dropout_rate
                mask = keep / (1.0 - model.dropout_rate)
            a = a * mask
        used_masks.append(mask)
    zo = _mm(a, p["out.W"], stable)[:, 0] + p["out.b"][0]
    pred = np.maximum(zo, 0.0)
    if not np.isfinite(pred).all():
        raise TrainingError("non-finite prediction")
    cache = {"lstm": lstm_caches, "dense_in": dense_in, "pre": pre, "masks": used_masks,
             "last": a, "zo": zo, "n_params": len(p)}
    return pred, cache


def backward(model: TarpmlModel, cache, dpred) -> dict:
    """Exact gradients of sum(dpred * prediction) for every parameter."""
    p = model.params
    if cache.get("n_params") != len(p) or len(cache["lstm"]) != len(model.lstm_sizes):
        raise ValueError("cache does not belong to this model")
    grads = {}
    dzo = np.asarray(dpred, dtype=np.float64) * (cache["zo"] > 0)
    grads["out.W"] = dzo[None, :] @ cache["last"]
    grads["out.b"] = np.array([dzo.sum()])
    da = dzo[:, None] * p["out.W"]
    for j in range(model.n_dense - 1, -1, -1):
        mask = cache["masks"][j]
        if mask is not None:
            da = da * mask
        dz = da * (cache["pre"][j] > 0)
        grads[f"dense{j}.W"] = dz.T @ cache["dense_in"][j]
        grads[f"dense{j}.b"] = dz.sum(axis=0)
        da = dz @ p[f"dense{j}.W"]
    top = model.lstm_sizes[-1]
    lc = cache["lstm"]
    n_t, n_b = lc[-1]["hs"].shape[:2]
    dhs = np.zeros((n_t, n_b, top))
    dhs[-1] = da[:, :top]
    for l in range(len(model.lstm_sizes) - 1, -1, -1):
        dx, dW, dU, db = lstm_backward(p[f"lstm{l}.W"], p[f"lstm{l}.U"], lc[l], dhs)
        grads[f"lstm{l}.W"], grads[f"lstm{l}.U"], grads[f"lstm{l}.b"] = dW, dU, db
        dhs = dx
    return grads


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. the predictions."""
    r = pred - target
    with np.errstate(over="ignore"):
        return float(np.mean(r * r)), 2.0 * r / r.size


@dataclass
class RmspropState:
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    v: dict = field(default_factory=dict, repr=False)


def rmsprop_step(state: RmspropState, params: dict, grads: dict) -> None:
    """In-place update: v <- rho v + (1-rho) g^2; p <- p - lr g / sqrt(v + eps)."""
    for name, g in grads.items():
        v = state.v.get(name)
        if v is None:
            v = np.zeros_like(g)
        v = state.rho * v + (1.0 - state.rho) * g * g
        step = state.lr * g / np.sqrt(v + state.eps)
        if not np.isfinite(step).all():
            raise TrainingError(f"non-finite update for {name}")
        state.v[name] = v
        params[name] -= step


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    seed: int = 0
    patience: int = 10
    max_train_samples: int = 0
    max_val_samples: int = 0


def _cap(idx, limit, rng):
    if limit and idx.size > limit:
        return np.sort(rng.choice(idx, size=limit, replace=False))
    return idx


def _batched(model, seq, coords, stable, batch_size=512):
    out = np.empty(seq.shape[0])
    for s in range(0, seq.shape[0], batch_size):
        out[s:s + batch_size], _ = forward(model, seq[s:s + batch_size], coords[s:s + batch_size],
                                           stable=stable)
    return out


def train(model: TarpmlModel, split, store, config: TrainConfig, rng=None, state=None):
    """Mini-batch RMSProp on MSE with best-validation retention.

    Returns (model at best validation epoch, history, optimizer state).
    History rows hold ``epoch``, ``train_loss`` (mean train-mode batch loss),
    ``train_mse`` and ``val_mse`` (inference mode).
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if state is None:
        state = RmspropState(config.lr, config.rho, config.eps)
    tr = _cap(np.asarray(split.train), config.max_train_samples, rng)
    va = _cap(np.asarray(split.validation), config.max_val_samples, rng)
    if tr.size == 0 or va.size == 0:
        raise ValueError("training needs non-empty train and validation partitions")
    seq_tr, co_tr, y_tr = np.ascontiguousarray(store.sequences[tr]), store.coords[tr], store.targets[tr]
    seq_va, co_va, y_va = np.ascontiguousarray(store.sequences[va]), store.coords[va], store.targets[va]

    model = model.copy()
    best = (math.inf, model.copy(), copy.deepcopy(state))
    history = []
    bad = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(tr.size)
        total = 0.0
        try:
            for s in range(0, tr.size, config.batch_size):
                b = perm[s:s + config.batch_size]
                pred, cache = forward(model, seq_tr[b], co_tr[b], train=True, rng=rng)
                loss, dpred = mse_loss(pred, y_tr[b])
                if not math.isfinite(loss):
                    raise TrainingError("non-finite loss")
                rmsprop_step(state, model.params, backward(model, cache, dpred))
                total += loss * b.size
            tr_mse, _ = mse_loss(_batched(model, seq_tr, co_tr, False), y_tr)
            va_mse, _ = mse_loss(_batched(model, seq_va, co_va, False), y_va)
            if not (math.isfinite(tr_mse) and math.isfinite(va_mse)):
                raise TrainingError("non-finite evaluation loss")
        except TrainingError as exc:
            raise TrainingDiverged(f"diverged in epoch {epoch}: {exc}", best[1], history) from exc
        history.append({"epoch": epoch, "train_loss": total / tr.size,
                        "train_mse": tr_mse, "val_mse": va_mse})
        log.info("epoch %d train %.6g val %.6g", epoch, tr_mse, va_mse)
        if va_mse < best[0]:
            best = (va_mse, model.copy(), copy.deepcopy(state))
            bad = 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    return best[1], history, best[2]


def predict(model: TarpmlModel, sequences, coords, batch_size=256) -> np.ndarray:
    """Inference-mode predictions; per-sample results do not depend on batching."""
    seq = np.asarray(sequences, dtype=np.float64)
    if seq.shape[0] == 0:
        return np.zeros(0)
    if seq.ndim != 2 or seq.shape[1] != model.seq_len:
        raise ValueError(f"model expects sequence length {model.seq_len}, got {seq.shape}")
    return _batched(model, seq, np.asarray(coords, dtype=np.float64), True, batch_size)


def save_model(model: TarpmlModel, path, state: RmspropState | None = None) -> None:
    hyper = model.hyper()
    tensors = dict(model.params)
    if state is not None:
        hyper["optimizer"] = {"lr": state.lr, "rho": state.rho, "eps": state.eps}
        tensors.update({f"opt.v.{k}": v for k, v in state.v.items()})
    checkpoint.save(path, "tarpml", hyper, tensors)


def model_from_container(hyper, tensors):
    params = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    try:
        model = TarpmlModel(hyper["lstm_sizes"], hyper["dense_size"], hyper["seq_len"],
                            hyper["window_days"], hyper["dropout_rate"], hyper["n_dense"], params)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint does not describe a valid model: {exc}") from exc
    state = None
    if "optimizer" in hyper:
        o = hyper["optimizer"]
        v = {k[len("opt.v."):]: t for k, t in tensors.items() if k.startswith("opt.v.")}
        state = RmspropState(o["lr"], o["rho"], o["eps"], v)
    return model, state


def load_model(path):
    """Return (model, optimizer state or None)."""
    kind, hyper, tensors = checkpoint.load(path)
    if kind != "tarpml":
        raise FormatError(f"{path}: checkpoint kind {kind!r} is not a tarpml model")
    return model_from_container(hyper, tensors)
