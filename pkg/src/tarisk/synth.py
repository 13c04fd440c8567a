"""Synthetic accident events from an inhomogeneous Poisson process.

Intensity per cell-hour is a hotspot field (exponential decay in Manhattan
distance over a flat base rate) modulated by hour-of-day and day-of-week
profiles. Random numbers come from NumPy's PCG64 bit generator; Poisson
counts are drawn by CDF inversion for rates below 10 and by a rounded
normal approximation above.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import kernels
from .ingest import AccidentRecord, GridSpec

MAX_RATE = 1e6
INVERSION_LIMIT = 10.0
# keep generated points strictly inside their cell
_EDGE = 1e-6

# hour-of-day multipliers with morning and evening rush peaks
DEFAULT_HOUR_PROFILE = (
    0.25, 0.15, 0.1, 0.1, 0.15, 0.3, 0.6, 1.8, 2.0, 1.2, 1.0, 1.0,
    1.1, 1.0, 1.0, 1.1, 1.3, 2.0, 2.2, 1.6, 1.0, 0.8, 0.6, 0.4,
)
# Monday first
DEFAULT_DOW_PROFILE = (1.0, 1.0, 1.0, 1.0, 1.1, 0.8, 0.7)


@dataclass(frozen=True)
class Hotspot:
    row: float
    col: float
    amplitude: float
    decay: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("hotspot amplitude must be >= 0")
        if self.decay <= 0:
            raise ValueError("hotspot spatial decay must be > 0")


@dataclass
class SynthConfig:
    grid: GridSpec
    n_days: int
    seed: int = 0
    hotspots: list = field(default_factory=list)
    base_rate: float = 0.01
    hour_profile: tuple = DEFAULT_HOUR_PROFILE
    dow_profile: tuple = DEFAULT_DOW_PROFILE

    def __post_init__(self):
        self.hotspots = [h if isinstance(h, Hotspot) else Hotspot(*h) for h in self.hotspots]
        if self.n_days < 0:
            raise ValueError("n_days must be >= 0")
        if self.base_rate < 0:
            raise ValueError("base_rate must be >= 0")
        if len(self.hour_profile) != 24 or len(self.dow_profile) != 7:
            raise ValueError("hour_profile needs 24 entries and dow_profile 7")
        if min(self.hour_profile) < 0 or min(self.dow_profile) < 0:
            raise ValueError("profile multipliers must be >= 0")
        if self.grid.slot_seconds != 3600:
            raise ValueError("synthetic generation assumes hourly slots")


def spatial_field(config: SynthConfig) -> np.ndarray:
    """Base-plus-hotspot rate per cell, shape (n_rows, n_cols)."""
    g = config.grid
    rr, cc = np.meshgrid(np.arange(g.n_rows), np.arange(g.n_cols), indexing="ij")
    out = np.full((g.n_rows, g.n_cols), float(config.base_rate))
    for h in config.hotspots:
        dist = np.abs(rr - h.row) + np.abs(cc - h.col)
        out += h.amplitude * np.exp(-dist / h.decay)
    return out


def intensity(config: SynthConfig) -> np.ndarray:
    """Expected count per (row, col, hour slot)."""
    g = config.grid
    n_slots = 24 * config.n_days
    start = datetime.fromtimestamp(g.time_origin, tz=timezone.utc)
    base_hour = start.hour
    base_dow = start.weekday()
    slots = np.arange(n_slots)
    hour = (base_hour + slots) % 24
    dow = (base_dow + (base_hour + slots) // 24) % 7
    temporal = np.asarray(config.hour_profile, float)[hour] * np.asarray(config.dow_profile, float)[dow]
    lam = spatial_field(config)[:, :, None] * temporal[None, None, :]
    if lam.size and lam.max() > MAX_RATE:
        raise ValueError(f"rate {lam.max():.3g} per cell-hour exceeds {MAX_RATE:.0e}")
    return lam


def poisson_counts(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one Poisson count per entry of ``lam`` (any shape)."""
    flat = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    u = rng.random(flat.size)
    z = rng.standard_normal(flat.size)
    out = np.zeros(flat.size, dtype=np.int64)
    small = flat < INVERSION_LIMIT
    if small.any():
        ls = np.ascontiguousarray(flat[small])
        out[small] = kernels.poisson_small(ls, np.exp(-ls), np.ascontiguousarray(u[small]))
    big = ~small
    if big.any():
        lb = flat[big]
        out[big] = np.maximum(np.floor(lb + np.sqrt(lb) * z[big] + 0.5), 0).astype(np.int64)
    return out.reshape(lam.shape)


def generate(config: SynthConfig) -> list:
    """Sample events; output is ordered by timestamp, ties by draw order."""
    g = config.grid
    lam = intensity(config)
    rng = np.random.default_rng(config.seed)
    counts = poisson_counts(lam, rng)
    total = int(counts.sum())
    if total == 0:
        return []
    # expand to one row per event, (row, col, slot) order
    rows, cols, slots = np.nonzero(counts)
    reps = counts[rows, cols, slots]
    rows = np.repeat(rows, reps)
    cols = np.repeat(cols, reps)
    slots = np.repeat(slots, reps)
    frac_t = rng.random(total)
    frac_x = _EDGE + (1 - 2 * _EDGE) * rng.random(total)
    frac_y = _EDGE + (1 - 2 * _EDGE) * rng.random(total)
    ts = g.time_origin + slots * g.slot_seconds + np.floor(frac_t * g.slot_seconds)
    lon = g.origin_lon + (cols + frac_x) * g.cell_deg_lon
    lat = g.origin_lat + (rows + frac_y) * g.cell_deg_lat
    order = np.argsort(ts, kind="stable")
    return [AccidentRecord(float(ts[i]), float(lon[i]), float(lat[i])) for i in order]
