"""Risk target, supervised samples, and chronological splits.

Risk at (cell, hour t) is the mean event count over the same hour on the
previous D days. A sample pairs the L hourly risk values before t with the
cell's normalised centre coordinate and the risk at t as target.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import CountCube, FormatError, GridSpec

HOURS_PER_DAY = 24
VALIDATION_FRACTION_PCT = 20

STORE_MAGIC = b"TASAMP\x00\x00"
STORE_VERSION = 1
_STORE_HEADER = struct.Struct("<8sIIQdd")


@dataclass
class RiskCube:
    values: np.ndarray  # (rows, cols, slots); NaN before the first defined slot
    window_days: int
    grid: GridSpec

    @property
    def first_defined(self) -> int:
        return HOURS_PER_DAY * self.window_days

    @property
    def n_slots(self) -> int:
        return self.values.shape[2]


def risk_cube(cube: CountCube, window_days: int) -> RiskCube:
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    if cube.grid.slot_seconds != 3600:
        raise ValueError("risk needs hourly slots")
    lag = HOURS_PER_DAY * window_days
    n = cube.n_slots
    if n <= lag:
        raise ValueError(f"cube has {n} slots; window of {window_days} day(s) needs more than {lag}")
    counts = cube.counts
    acc = np.zeros(counts.shape[:2] + (n - lag,), dtype=np.int64)
    for d in range(1, window_days + 1):
        s = HOURS_PER_DAY * d
        acc += counts[:, :, lag - s:n - s]
    values = np.full(counts.shape, np.nan)
    values[:, :, lag:] = acc / window_days
    return RiskCube(values, window_days, cube.grid)


@dataclass
class SampleStore:
    """Flat, (slot, row, col)-ordered supervised samples.

    ``sequences`` may be a strided view into the risk cube; treat it as
    read-only.
    """

    sequences: np.ndarray  # (N, L)
    coords: np.ndarray  # (N, 2) normalised lon, lat
    targets: np.ndarray  # (N,)
    rows: np.ndarray
    cols: np.ndarray
    slots: np.ndarray
    window_days: int
    time_origin: float
    slot_seconds: float

    @property
    def seq_len(self) -> int:
        return self.sequences.shape[1]

    def __len__(self):
        return self.targets.shape[0]

    @property
    def slot_times(self) -> np.ndarray:
        return self.time_origin + self.slots * self.slot_seconds

    def features(self, idx=None) -> np.ndarray:
        """Flat (N, L + 2) design matrix: sequence then coordinates."""
        if idx is None:
            idx = slice(None)
        return np.hstack([self.sequences[idx], self.coords[idx]])

    def subset(self, idx) -> "SampleStore":
        idx = np.asarray(idx)
        return SampleStore(
            np.ascontiguousarray(self.sequences[idx]), self.coords[idx], self.targets[idx],
            self.rows[idx], self.cols[idx], self.slots[idx],
            self.window_days, self.time_origin, self.slot_seconds,
        )


def normalized_coords(grid: GridSpec, rows, cols) -> np.ndarray:
    """Cell-centre lon/lat min-max scaled over the grid to [0, 1]."""
    cx = np.asarray(cols, dtype=np.float64) / max(grid.n_cols - 1, 1)
    cy = np.asarray(rows, dtype=np.float64) / max(grid.n_rows - 1, 1)
    return np.column_stack([cx, cy])


def build_samples(risk: RiskCube, seq_len: int, slots=None) -> SampleStore:
    """One sample per cell and target slot whose full history is defined.

    ``slots`` restricts the target slots (default: all eligible).
    """
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    n_r, n_c, n_t = risk.values.shape
    first = risk.first_defined + seq_len
    if first >= n_t:
        raise ValueError(
            f"no valid samples: need slot >= {first} but cube has {n_t} slots "
            f"(window {risk.window_days} d, sequence {seq_len})"
        )
    n_cells = n_r * n_c
    series = np.ascontiguousarray(risk.values.reshape(n_cells, n_t).T)  # (T, cells)
    win = np.lib.stride_tricks.sliding_window_view(series, seq_len, axis=0)  # (T-L+1, cells, L)
    target_slots = np.arange(first, n_t) if slots is None else np.asarray(slots, dtype=np.int64)
    if target_slots.size and (target_slots.min() < first or target_slots.max() >= n_t):
        raise ValueError("requested target slots outside the valid range")
    # contiguous slot range keeps the sequences as a zero-copy view
    if target_slots.size and np.array_equal(target_slots, np.arange(target_slots[0], target_slots[-1] + 1)):
        seqs = win[target_slots[0] - seq_len:target_slots[-1] + 1 - seq_len].reshape(-1, seq_len)
    else:
        seqs = win[target_slots - seq_len].reshape(-1, seq_len)
    seqs.flags.writeable = False
    cell = np.tile(np.arange(n_cells), target_slots.size)
    slot = np.repeat(target_slots, n_cells)
    rows, cols = np.divmod(cell, n_c)
    coords = normalized_coords(risk.grid, rows, cols)
    targets = series[slot, cell]
    return SampleStore(
        seqs, coords, targets, rows, cols, slot,
        risk.window_days, risk.grid.time_origin, risk.grid.slot_seconds,
    )


@dataclass
class DataSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    train_end: float
    validation_start: float
    test_end: float


def chrono_split(store: SampleStore, train_end: float, test_end: float) -> DataSplit:
    """Pre-test pool before ``train_end``; its last 20% of slots validate."""
    if not train_end < test_end:
        raise ValueError("train_end must precede test_end")
    times = store.slot_times
    pool = times < train_end
    test = np.nonzero((times >= train_end) & (times < test_end))[0]
    pool_slots = np.unique(store.slots[pool])
    n_val = (pool_slots.size * VALIDATION_FRACTION_PCT + 50) // 100
    n_train = pool_slots.size - n_val
    if n_train == 0 or n_val == 0 or test.size == 0:
        raise ValueError(
            f"empty partition: {n_train} train / {n_val} validation slots, {test.size} test samples"
        )
    first_val_slot = pool_slots[n_train]
    train = np.nonzero(pool & (store.slots < first_val_slot))[0]
    val = np.nonzero(pool & (store.slots >= first_val_slot))[0]
    val_start = store.time_origin + first_val_slot * store.slot_seconds
    return DataSplit(train, val, test, float(train_end), float(val_start), float(test_end))


def save_store(store: SampleStore, path) -> None:
    """Fixed-width records: sequence, coords, target, row, col, slot (float64)."""
    n, L = store.sequences.shape
    rec = np.empty((n, L + 6), dtype="<f8")
    rec[:, :L] = store.sequences
    rec[:, L:L + 2] = store.coords
    rec[:, L + 2] = store.targets
    rec[:, L + 3] = store.rows
    rec[:, L + 4] = store.cols
    rec[:, L + 5] = store.slots
    head = _STORE_HEADER.pack(STORE_MAGIC, STORE_VERSION, L, n, store.time_origin, store.slot_seconds)
    extra = struct.pack("<I", store.window_days)
    Path(path).write_bytes(head + extra + rec.tobytes())


def load_store(path) -> SampleStore:
    raw = Path(path).read_bytes()
    if len(raw) < _STORE_HEADER.size + 4:
        raise FormatError(f"{path}: truncated header")
    magic, version, L, n, t0, slot_s = _STORE_HEADER.unpack_from(raw)
    if magic != STORE_MAGIC:
        raise FormatError(f"{path}: not a sample store (bad magic)")
    if version != STORE_VERSION:
        raise FormatError(f"{path}: unsupported store version {version}")
    (window_days,) = struct.unpack_from("<I", raw, _STORE_HEADER.size)
    off = _STORE_HEADER.size + 4
    if len(raw) != off + 8 * n * (L + 6):
        raise FormatError(f"{path}: size does not match {n} records of length {L}")
    rec = np.frombuffer(raw, dtype="<f8", offset=off).reshape(n, L + 6).astype(np.float64)
    ints = rec[:, L + 3:].astype(np.int64)
    return SampleStore(
        np.ascontiguousarray(rec[:, :L]), np.ascontiguousarray(rec[:, L:L + 2]),
        rec[:, L + 2].copy(), ints[:, 0], ints[:, 1], ints[:, 2], window_days, t0, slot_s,
    )
