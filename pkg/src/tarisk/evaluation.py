"""Error metrics, model comparison, the sequence-length sweep, and
predicted-versus-real risk maps."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, checkpoint, nn
from .ingest import format_timestamp
from .patterns import write_grid_csv, write_pgm
from .risk import build_samples, chrono_split, risk_cube

log = logging.getLogger(__name__)

MODEL_KINDS = ("tarpml", "lasso", "svr", "dtr", "arma", "havg")


@dataclass
class MetricReport:
    mae: float
    mse: float
    rmse: float
    n: int
    model: str = ""
    window_days: int = 0
    seq_len: int = 0


def metrics(real, predicted, model="", window_days=0, seq_len=0) -> MetricReport:
    r = np.asarray(real, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if r.shape != p.shape or r.ndim != 1:
        raise ValueError(f"shape mismatch: {r.shape} vs {p.shape}")
    if r.size == 0:
        raise ValueError("metrics need at least one pair")
    if not (np.isfinite(r).all() and np.isfinite(p).all()):
        raise ValueError("metrics need finite inputs")
    err = r - p
    mse = float(np.mean(err * err))
    return MetricReport(float(np.mean(np.abs(err))), mse, math.sqrt(mse), int(r.size),
                        model, window_days, seq_len)


@dataclass
class FitSettings:
    """Hyperparameters for every model kind; defaults mirror the CLI."""

    seed: int = 0
    lstm_sizes: tuple = nn.PAPER_LSTM_SIZES
    dense_size: int = nn.PAPER_DENSE_SIZE
    dropout: float = 0.5
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    lasso_lambda: float = 0.01
    lasso_tol: float = 1e-6
    lasso_max_iter: int = 1000
    svr_c: float = 1.0
    svr_epsilon: float = 0.01
    svr_epochs: int = 20
    svr_lr: float = 0.01
    tree_max_depth: int = 12
    tree_min_samples_leaf: int = 5
    arma_p: int = 24
    arma_q: int = 1


@dataclass
class Dataset:
    """Everything derived from one cube for a given window and sequence length."""

    risk: object
    store: object
    split: object
    test: np.ndarray  # evaluation subset of split.test


def cap_indices(idx, limit, rng):
    idx = np.asarray(idx)
    if limit and idx.size > limit:
        return np.sort(rng.choice(idx, size=limit, replace=False))
    return idx


def prepare(cube, window_days, seq_len, train_end, test_end, seed=0,
            max_train=0, max_val=0, max_test=0) -> Dataset:
    """Risk cube, samples, chronological split, and seeded partition caps."""
    risk = risk_cube(cube, window_days)
    store = build_samples(risk, seq_len)
    split = chrono_split(store, train_end, test_end)
    rng = np.random.default_rng([seed, 0x5EED])
    split.train = cap_indices(split.train, max_train, rng)
    split.validation = cap_indices(split.validation, max_val, rng)
    test = cap_indices(split.test, max_test, rng)
    return Dataset(risk, store, split, test)


def fit_model(kind: str, data: Dataset, settings: FitSettings):
    """Train one model kind; returns (model, history or None, optimizer state or None)."""
    store, split = data.store, data.split
    L, D = store.seq_len, store.window_days
    if kind == "tarpml":
        rng = np.random.default_rng(settings.seed)
        model = nn.TarpmlModel.initialize(rng, settings.lstm_sizes, settings.dense_size, L,
                                          window_days=D, dropout_rate=settings.dropout)
        model, history, state = nn.train(model, split, store, settings.train, rng=rng)
        return model, history, state
    if kind in ("lasso", "svr", "dtr"):
        x = store.features(split.train)
        y = store.targets[split.train]
        if kind == "lasso":
            m = baselines.fit_lasso(x, y, settings.lasso_lambda, settings.lasso_max_iter, settings.lasso_tol)
        elif kind == "svr":
            m = baselines.fit_svr_linear(x, y, settings.svr_c, settings.svr_epsilon, settings.svr_epochs,
                                         settings.svr_lr, seed=settings.seed)
        else:
            m = baselines.fit_tree(x, y, settings.tree_max_depth, settings.tree_min_samples_leaf)
        m.seq_len = L
        return m, None, None
    if kind == "arma":
        fit_end = int(store.slots[split.validation].max()) + 1
        return baselines.fit_arma(data.risk, fit_end, settings.arma_p, settings.arma_q), None, None
    if kind == "havg":
        return baselines.historical_average(data.risk), None, None
    raise ValueError(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}")


def save_any(model, path, state=None, seq_len=0, window_days=0) -> None:
    if isinstance(model, nn.TarpmlModel):
        nn.save_model(model, path, state)
    else:
        baselines.save_baseline(model, path, {"seq_len": seq_len, "window_days": window_days})


def load_any(path):
    """Load any checkpoint; returns (kind, model, hyper)."""
    kind, hyper, tensors = checkpoint.load(path)
    if kind == "tarpml":
        model, _ = nn.model_from_container(hyper, tensors)
    else:
        model = baselines.from_container(kind, hyper, tensors)
    return kind, model, hyper


def evaluate_model(model, store, idx, name="", window_days=0, seq_len=0) -> MetricReport:
    pred = np.asarray(model.predict(store, idx), dtype=np.float64)
    real = store.targets[idx]
    ok = np.isfinite(pred)
    if not ok.all():
        log.warning("%s: %d sample(s) without a prediction skipped", name, int((~ok).sum()))
    return metrics(real[ok], pred[ok], name, window_days, seq_len)


def compare_models(models: dict, store, idx, skip_missing=True) -> list:
    """One report per named model over the same test samples, in the given order.

    A ``None`` entry stands for a missing checkpoint.
    """
    reports = []
    for name, model in models.items():
        if model is None:
            if not skip_missing:
                raise FileNotFoundError(f"missing checkpoint for {name}")
            warnings.warn(f"skipping {name}: no checkpoint", RuntimeWarning, stacklevel=2)
            continue
        reports.append(evaluate_model(model, store, idx, name, store.window_days, store.seq_len))
    return reports


def write_reports(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "MAE", "MSE", "RMSE", "n"])
        for r in reports:
            w.writerow([r.model, repr(r.mae), repr(r.mse), repr(r.rmse), r.n])


def read_reports(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricReport(float(r["MAE"]), float(r["MSE"]), float(r["RMSE"]), int(r["n"]), r["model"])
            for r in rows]


def ordering_report(reports, reference="tarpml") -> str:
    """Plain-text check that ``reference`` has the lowest test RMSE.

    Lists every model that beats the reference with its RMSE margin, so an
    exception to the expected ordering is documented rather than silent.
    """
    by_name = {r.model: r for r in reports}
    if reference not in by_name:
        raise ValueError(f"no report for {reference!r}")
    ref = by_name[reference]
    lines = [f"reference {reference}: RMSE {ref.rmse!r} on {ref.n} test samples"]
    beaten = [r for r in reports if r.model != reference and r.rmse < ref.rmse]
    for r in reports:
        if r.model != reference:
            lines.append(f"  {r.model}: RMSE {r.rmse!r} (reference minus model {ref.rmse - r.rmse:+.6g})")
    if beaten:
        names = ", ".join(r.model for r in beaten)
        lines.append(f"ordering exception: {reference} RMSE exceeds {names}")
    else:
        lines.append(f"ordering holds: {reference} RMSE <= every other model")
    return "\n".join(lines) + "\n"


def cell_seed(master: int, seq_len: int, window_days: int) -> int:
    return int(np.random.SeedSequence([master, seq_len, window_days]).generate_state(1)[0])


def sweep_seq_len(cube, lengths, windows, train_end, test_end, settings: FitSettings,
                  max_train=0, max_val=0, max_test=0) -> dict:
    """TARPML test RMSE for every (window, length) pair on identical split boundaries.

    Returns {(window_days, seq_len): rmse or error message}.
    """
    table = {}
    for D in windows:
        for L in lengths:
            seed = cell_seed(settings.seed, L, D)
            try:
                data = prepare(cube, D, L, train_end, test_end, seed, max_train, max_val, max_test)
                s = FitSettings(**{**settings.__dict__, "seed": seed})
                model, _, _ = fit_model("tarpml", data, s)
                table[(D, L)] = evaluate_model(model, data.store, data.test, "tarpml", D, L).rmse
            except (ValueError, nn.TrainingError) as exc:
                log.error("sweep cell D=%s L=%s failed: %s", D, L, exc)
                table[(D, L)] = f"FAILED: {exc}"
            log.info("sweep D=%s L=%s -> %s", D, L, table[(D, L)])
    return table


def write_sweep(table, lengths, windows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_days"] + [f"L={L}" for L in lengths])
        for D in windows:
            row = [D]
            for L in lengths:
                v = table[(D, L)]
                row.append(repr(v) if isinstance(v, float) else v)
            w.writerow(row)


def read_sweep(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    lengths = [int(h.split("=")[1]) for h in rows[0][1:]]
    out = {}
    for row in rows[1:]:
        for L, v in zip(lengths, row[1:]):
            try:
                out[(int(row[0]), L)] = float(v)
            except ValueError:
                out[(int(row[0]), L)] = v
    return out


def _slot_samples(risk, seq_len, slots):
    return build_samples(risk, seq_len, slots=slots)


def export_risk_maps(model, risk, slot: int, out_dir, name="model", seq_len=None, curve_cell=None,
                     curve_slots=None) -> list:
    """Real and predicted risk grids at one slot plus a per-cell risk curve.

    Writes ``real_risk.{csv,pgm}``, ``<name>_risk.{csv,pgm}`` and
    ``<name>_curve.csv`` under ``out_dir``; returns the written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    L = seq_len or getattr(model, "seq_len", 0) or 1
    first = risk.first_defined + L
    if not first <= slot < risk.n_slots:
        raise ValueError(f"slot {slot} has no defined input window (valid {first}..{risk.n_slots - 1})")
    n_r, n_c = risk.values.shape[:2]
    store = _slot_samples(risk, L, [slot])
    real = risk.values[:, :, slot]
    pred = np.asarray(model.predict(store), dtype=np.float64).reshape(n_r, n_c)
    pred = np.where(np.isfinite(pred), pred, 0.0)
    written = []
    for stem, grid in (("real_risk", real), (f"{name}_risk", pred)):
        write_grid_csv(grid, out_dir / f"{stem}.csv", "risk")
        write_pgm(grid, out_dir / f"{stem}.pgm")
        written += [out_dir / f"{stem}.csv", out_dir / f"{stem}.pgm"]
    if curve_cell is None:
        tot = np.nansum(risk.values, axis=2)
        curve_cell = tuple(int(v) for v in np.unravel_index(int(np.argmax(tot)), tot.shape))
    if curve_slots is None:
        curve_slots = np.arange(slot, min(slot + 24, risk.n_slots))
    curve_slots = np.asarray(curve_slots)
    cs = _slot_samples(risk, L, curve_slots)
    r, c = curve_cell
    sel = np.nonzero((cs.rows == r) & (cs.cols == c))[0]
    cp = np.asarray(model.predict(cs, sel), dtype=np.float64)
    path = out_dir / f"{name}_curve.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "time", "row", "col", "real", "predicted"])
        for s, rv, pv in zip(cs.slots[sel], cs.targets[sel], cp):
            t = risk.grid.time_origin + s * risk.grid.slot_seconds
            w.writerow([int(s), format_timestamp(t), r, c, repr(float(rv)),
                        repr(float(pv)) if math.isfinite(pv) else ""])
    written.append(path)
    return written
