"""Event records, the space-time grid, and the count cube.

Records are binned with a local equirectangular projection: a fixed
meters-per-degree scale per axis, taken at the grid origin unless given.
Cells and slots are half-open, so a point on a shared boundary lands in the
higher-index cell.
"""
from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

METERS_PER_DEG_LAT = 111_320.0

CUBE_MAGIC = b"TACUBE\x00\x00"
CUBE_VERSION = 1
_CUBE_HEADER = struct.Struct("<8sI8dIII")


class FormatError(ValueError):
    """A file does not match the expected binary layout."""


class ParseError(ValueError):
    """A malformed input line in strict mode."""


@dataclass(frozen=True)
class AccidentRecord:
    timestamp: float
    lon: float
    lat: float

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"lon out of range: {self.lon}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"lat out of range: {self.lat}")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid anchored at its south-west corner plus hourly slots."""

    origin_lon: float
    origin_lat: float
    n_rows: int
    n_cols: int
    time_origin: float
    cell_size_m: float = 1000.0
    slot_seconds: float = 3600.0
    meters_per_deg_lon: float = 0.0
    meters_per_deg_lat: float = 0.0

    def __post_init__(self):
        # 0 means "derive from the origin latitude"
        if self.meters_per_deg_lat == 0.0:
            object.__setattr__(self, "meters_per_deg_lat", METERS_PER_DEG_LAT)
        if self.meters_per_deg_lon == 0.0:
            scale = METERS_PER_DEG_LAT * math.cos(math.radians(self.origin_lat))
            object.__setattr__(self, "meters_per_deg_lon", scale)
        if self.cell_size_m <= 0 or self.slot_seconds <= 0:
            raise ValueError("cell_size_m and slot_seconds must be positive")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if self.meters_per_deg_lon <= 0 or self.meters_per_deg_lat <= 0:
            raise ValueError("meters-per-degree scales must be positive")

    @property
    def cell_deg_lon(self) -> float:
        return self.cell_size_m / self.meters_per_deg_lon

    @property
    def cell_deg_lat(self) -> float:
        return self.cell_size_m / self.meters_per_deg_lat

    def cell_center(self, row, col):
        """Longitude/latitude of the centre of cell (row, col)."""
        lon = self.origin_lon + (np.asarray(col) + 0.5) * self.cell_deg_lon
        lat = self.origin_lat + (np.asarray(row) + 0.5) * self.cell_deg_lat
        return lon, lat

    def slot_start(self, slot):
        return self.time_origin + np.asarray(slot) * self.slot_seconds


@dataclass
class CountCube:
    """Matrix S: event counts indexed (row, col, slot)."""

    counts: np.ndarray
    grid: GridSpec
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 3 or self.counts.shape[:2] != (self.grid.n_rows, self.grid.n_cols):
            raise ValueError(f"counts shape {self.counts.shape} does not match grid")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def n_slots(self) -> int:
        return self.counts.shape[2]

    def __eq__(self, other):
        if not isinstance(other, CountCube):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.counts, other.counts)


def parse_timestamp(text: str) -> float:
    """Integer epoch seconds or ISO-8601 (``Z`` or explicit offset)."""
    text = text.strip()
    try:
        return float(int(text))
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class ParseResult:
    records: list
    skipped: int = 0


def parse_records(source, strict: bool = False) -> ParseResult:
    """Read ``timestamp,lon,lat`` lines after a header.

    ``source`` may be a path, a binary/text stream, or raw bytes. Malformed
    lines are skipped and tallied unless ``strict`` is set.
    """
    if isinstance(source, (bytes, bytearray)):
        text = source.decode("utf-8")
    elif isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read events from {source}: {exc}") from exc
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    records = []
    skipped = 0
    lines = io.StringIO(text)
    lines.readline()  # header
    for lineno, line in enumerate(lines, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        try:
            if len(parts) != 3:
                raise ValueError(f"expected 3 fields, got {len(parts)}")
            rec = AccidentRecord(parse_timestamp(parts[0]), float(parts[1]), float(parts[2]))
        except ValueError as exc:
            if strict:
                raise ParseError(f"line {lineno}: {exc}") from exc
            skipped += 1
            continue
        records.append(rec)
    if skipped:
        log.warning("skipped %d malformed line(s)", skipped)
    return ParseResult(records, skipped)


def write_records(records, path) -> None:
    """Write records in the ingest CSV format (integer epoch seconds)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("timestamp,lon,lat\n")
        for r in records:
            fh.write(f"{int(r.timestamp)},{r.lon!r},{r.lat!r}\n")


def cell_indices(lon, lat, ts, grid: GridSpec):
    """Integer (row, col, slot) for coordinate arrays; may be out of range."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    row = np.floor((lat - grid.origin_lat) * grid.meters_per_deg_lat / grid.cell_size_m)
    col = np.floor((lon - grid.origin_lon) * grid.meters_per_deg_lon / grid.cell_size_m)
    slot = np.floor((ts - grid.time_origin) / grid.slot_seconds)
    return row.astype(np.int64), col.astype(np.int64), slot.astype(np.int64)


def discretize(records, grid: GridSpec, n_slots: int | None = None) -> CountCube:
    """Bin records into a count cube.

    When ``n_slots`` is None it is one past the latest slot of any record
    inside the spatial extent and after ``time_origin``.
    """
    n = len(records)
    lon = np.fromiter((r.lon for r in records), dtype=np.float64, count=n)
    lat = np.fromiter((r.lat for r in records), dtype=np.float64, count=n)
    ts = np.fromiter((r.timestamp for r in records), dtype=np.float64, count=n)
    row, col, slot = cell_indices(lon, lat, ts, grid)
    if n_slots is None:
        ok = (row >= 0) & (row < grid.n_rows) & (col >= 0) & (col < grid.n_cols) & (slot >= 0)
        n_slots = int(slot[ok].max()) + 1 if ok.any() else 0
    counts, dropped = kernels.accumulate_counts(row, col, slot, grid.n_rows, grid.n_cols, int(n_slots))
    if dropped:
        log.warning("dropped %d out-of-bounds record(s)", dropped)
    if counts.sum() == 0:
        log.warning("no in-bounds records; cube is all zero")
    return CountCube(counts, grid, dropped=int(dropped))


def save_cube(cube: CountCube, path) -> None:
    g = cube.grid
    if cube.counts.size and cube.counts.max() > np.iinfo(np.uint32).max:
        raise OverflowError("count exceeds 32-bit range")
    header = _CUBE_HEADER.pack(
        CUBE_MAGIC, CUBE_VERSION,
        g.origin_lon, g.origin_lat, g.cell_size_m, g.time_origin, g.slot_seconds,
        g.meters_per_deg_lon, g.meters_per_deg_lat, 0.0,
        g.n_rows, g.n_cols, cube.n_slots,
    )
    body = np.ascontiguousarray(cube.counts, dtype="<u4").tobytes()
    Path(path).write_bytes(header + body)


def load_cube(path) -> CountCube:
    raw = Path(path).read_bytes()
    if len(raw) < _CUBE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, *rest = _CUBE_HEADER.unpack_from(raw)
    if magic != CUBE_MAGIC:
        raise FormatError(f"{path}: not a cube file (bad magic)")
    if version != CUBE_VERSION:
        raise FormatError(f"{path}: unsupported cube version {version}")
    olon, olat, cell, t0, slot_s, mlon, mlat, _, n_rows, n_cols, n_slots = rest
    expected = _CUBE_HEADER.size + 4 * n_rows * n_cols * n_slots
    if len(raw) != expected:
        raise FormatError(f"{path}: size {len(raw)} does not match dimensions (expected {expected})")
    grid = GridSpec(olon, olat, n_rows, n_cols, t0, cell, slot_s, mlon, mlat)
    counts = np.frombuffer(raw, dtype="<u4", offset=_CUBE_HEADER.size)
    return CountCube(counts.reshape(n_rows, n_cols, n_slots).astype(np.int64), grid)
