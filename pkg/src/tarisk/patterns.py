"""Spatial and temporal structure of a count cube.

Spatial correlation at lag ``k`` compares each cell's deviation from the
slot mean with the mean deviation of all in-bounds cells exactly ``k``
Manhattan steps away (a Moran-style ring statistic). Its autocorrelation
over slots gives the space-time correlation surface.

Undefined correlations are NaN inside arrays and ``None`` at scalar level;
exported CSV files leave them empty.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import kernels
from .ingest import CountCube

# (start hour, end hour exclusive, label)
PERIODS = (
    (0, 7, "mid-night to dawn"),
    (7, 9, "morning rush hours"),
    (9, 12, "morning working hours"),
    (12, 14, "lunch break"),
    (14, 17, "afternoon working hours"),
    (17, 20, "afternoon rush hours"),
    (20, 24, "nighttime"),
)


def max_lag(n_rows: int, n_cols: int) -> int:
    return (n_rows - 1) + (n_cols - 1)


def _time_major(values) -> np.ndarray:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return np.ascontiguousarray(np.moveaxis(a, 2, 0))


def spatial_corr_series(values, k: int) -> np.ndarray:
    """C(k, t) for every slot of a (rows, cols, slots) array; NaN where undefined."""
    field = _time_major(values)
    n_t, n_r, n_c = field.shape
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > max_lag(n_r, n_c):
        return np.full(n_t, np.nan)
    num, den, any_pair = kernels.ring_corr(field, k)
    out = np.full(n_t, np.nan)
    if any_pair:
        ok = den > 0
        out[ok] = num[ok] / den[ok]
    return out


def spatial_corr(cube, k: int, t: int):
    """C(k, t) at one slot, or None when undefined."""
    counts = cube.counts if isinstance(cube, CountCube) else np.asarray(cube)
    if counts.ndim == 2:
        counts = counts[:, :, None]
    if not 0 <= t < counts.shape[2]:
        raise IndexError(f"slot {t} out of range")
    v = spatial_corr_series(counts[:, :, t:t + 1], k)[0]
    return None if math.isnan(v) else float(v)


@dataclass
class SpatialCorr:
    values: np.ndarray  # (max_k + 1, n_slots), NaN = undefined
    n_rows: int
    n_cols: int

    def get(self, k, t):
        v = self.values[k, t]
        return None if math.isnan(v) else float(v)


@dataclass
class SpatioTemporalCorr:
    values: np.ndarray  # (max_k + 1, max_tau + 1), NaN = undefined

    @property
    def max_k(self) -> int:
        return self.values.shape[0] - 1

    @property
    def max_tau(self) -> int:
        return self.values.shape[1] - 1

    def get(self, k, tau):
        v = self.values[k, tau]
        return None if math.isnan(v) else float(v)


def spatial_corr_table(cube, max_k: int) -> SpatialCorr:
    counts = cube.counts if isinstance(cube, CountCube) else np.asarray(cube)
    rows = [spatial_corr_series(counts, k) for k in range(max_k + 1)]
    return SpatialCorr(np.array(rows).reshape(max_k + 1, counts.shape[2]), counts.shape[0], counts.shape[1])


def lagged_autocorr(series, max_tau: int) -> np.ndarray:
    """Autocorrelation of a series with gaps (NaN) at lags 0..max_tau.

    The mean and the normalising sum of squares use every defined point;
    each lag's cross sum uses only pairs where both ends are defined.
    """
    x = np.asarray(series, dtype=np.float64)
    out = np.full(max_tau + 1, np.nan)
    ok = ~np.isnan(x)
    if ok.sum() < 2:
        return out
    dev = np.where(ok, x - x[ok].mean(), 0.0)
    den = (dev * dev).sum()
    if den == 0.0:
        return out
    n = x.size
    for tau in range(min(max_tau, n - 1) + 1):
        both = ok[:n - tau] & ok[tau:]
        if both.any():
            out[tau] = (dev[:n - tau] * dev[tau:]).sum() / den
    return out


def spatio_temporal_corr(cube, max_k: int, max_tau: int) -> SpatioTemporalCorr:
    counts = cube.counts if isinstance(cube, CountCube) else np.asarray(cube)
    if not 0 <= max_tau < counts.shape[2]:
        raise ValueError(f"max_tau must be in [0, {counts.shape[2] - 1}]")
    table = spatial_corr_table(counts, max_k)
    return temporal_corr_of(table, max_tau)


def temporal_corr_of(table: SpatialCorr, max_tau: int) -> SpatioTemporalCorr:
    vals = np.array([lagged_autocorr(row, max_tau) for row in table.values])
    return SpatioTemporalCorr(vals.reshape(table.values.shape[0], max_tau + 1))


@dataclass
class PeriodProfile:
    periods: tuple
    rows: list  # (date ISO string, period index, count)

    def totals(self) -> np.ndarray:
        out = np.zeros(len(self.periods), dtype=np.int64)
        for _, p, c in self.rows:
            out[p] += c
        return out

    def daily_matrix(self) -> np.ndarray:
        """(n_days, n_periods) count matrix in date order."""
        dates = sorted({d for d, _, _ in self.rows})
        pos = {d: i for i, d in enumerate(dates)}
        out = np.zeros((len(dates), len(self.periods)), dtype=np.int64)
        for d, p, c in self.rows:
            out[pos[d], p] = c
        return out


def period_profile(cube: CountCube) -> PeriodProfile:
    """Per-day event totals within each of the seven daily time periods."""
    g = cube.grid
    if g.slot_seconds != 3600:
        raise ValueError("period profiles need hourly slots")
    per_slot = cube.counts.sum(axis=(0, 1))
    hour_of = np.zeros(24, dtype=np.int64)
    for idx, (a, b, _) in enumerate(PERIODS):
        hour_of[a:b] = idx
    start = datetime.fromtimestamp(g.time_origin, tz=timezone.utc)
    acc: dict = {}
    for s, c in enumerate(per_slot):
        when = start + timedelta(hours=s)
        key = when.date().isoformat()
        day = acc.setdefault(key, [0] * len(PERIODS))
        day[hour_of[when.hour]] += int(c)
    rows = [(d, p, v[p]) for d, v in acc.items() for p in range(len(PERIODS))]
    return PeriodProfile(PERIODS, rows)


def scale_to_bytes(values) -> np.ndarray:
    """Linear map to 0..255 with max -> 255, rounding half up."""
    v = np.asarray(values, dtype=np.float64)
    top = v.max() if v.size else 0.0
    if top <= 0:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.clip(np.floor(v * 255.0 / top + 0.5), 0, 255).astype(np.uint8)


def write_pgm(values, path) -> None:
    """Binary P5 image; row 0 of the grid (southernmost) is the bottom line."""
    img = scale_to_bytes(values)[::-1]
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm` (grid orientation restored)."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    body = raw[len(raw) - w * h:]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)[::-1]


def write_grid_csv(values, path, value_name="count") -> None:
    v = np.asarray(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", value_name])
        for r in range(v.shape[0]):
            for c in range(v.shape[1]):
                x = v[r, c]
                w.writerow([r, c, int(x) if np.issubdtype(v.dtype, np.integer) else repr(float(x))])


def export_heatmap(cube: CountCube, path) -> tuple:
    """Write ``<path>.csv`` (row,col,count totals) and ``<path>.pgm``."""
    path = Path(path)
    totals = cube.counts.sum(axis=2)
    csv_path = path.with_suffix(".csv")
    pgm_path = path.with_suffix(".pgm")
    write_grid_csv(totals, csv_path)
    write_pgm(totals, pgm_path)
    return csv_path, pgm_path


def _fmt(v) -> str:
    return "" if math.isnan(v) else repr(float(v))


def export_contour(stc: SpatioTemporalCorr, path) -> None:
    """Rows are lags tau, columns distances k; undefined cells left empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau"] + [str(k) for k in range(stc.max_k + 1)])
        for tau in range(stc.max_tau + 1):
            w.writerow([tau] + [_fmt(stc.values[k, tau]) for k in range(stc.max_k + 1)])


def read_contour(path) -> SpatioTemporalCorr:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    n_k = len(rows[0]) - 1
    vals = np.full((n_k, len(rows) - 1), np.nan)
    for i, row in enumerate(rows[1:]):
        for k, cell in enumerate(row[1:]):
            if cell != "":
                vals[k, i] = float(cell)
    return SpatioTemporalCorr(vals)


def export_profile(profile: PeriodProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "period_index", "count"])
        w.writerows(profile.rows)


def contour_argmax(stc: SpatioTemporalCorr, k: int, lo: int, hi: int) -> int:
    """Lag in [lo, hi] with the largest defined correlation at distance k."""
    seg = stc.values[k, lo:hi + 1]
    if np.all(np.isnan(seg)):
        raise ValueError(f"no defined correlation for k={k} in [{lo}, {hi}]")
    return lo + int(np.nanargmax(seg))
