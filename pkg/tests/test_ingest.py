import io
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tarisk.ingest import (
    AccidentRecord,
    CountCube,
    FormatError,
    GridSpec,
    ParseError,
    discretize,
    format_timestamp,
    load_cube,
    parse_records,
    parse_timestamp,
    save_cube,
    write_records,
)

from conftest import T0

# one degree per cell on both axes, so boundaries are exact in binary
UNIT = GridSpec(0.0, 0.0, 4, 3, 0.0, cell_size_m=1000.0, slot_seconds=10.0,
                meters_per_deg_lon=1000.0, meters_per_deg_lat=1000.0)


def test_parse_iso_line():
    res = parse_records(b"timestamp,lon,lat\n2016-01-01T08:30:00Z,116.40,39.90\n")
    assert res.skipped == 0
    assert res.records == [AccidentRecord(1451637000.0, 116.40, 39.90)]


def test_parse_epoch_and_iso_agree():
    a = parse_records("timestamp,lon,lat\n1451637000,1,2\n".encode()).records[0]
    b = parse_records(io.StringIO("timestamp,lon,lat\n2016-01-01T08:30:00Z,1,2\n")).records[0]
    assert a == b


def test_header_only_is_empty():
    assert parse_records(b"timestamp,lon,lat\n").records == []


def test_bad_lat_skipped_or_fatal(caplog):
    data = b"timestamp,lon,lat\n0,1,abc\n0,1,2\n"
    res = parse_records(data)
    assert res.skipped == 1 and len(res.records) == 1
    with pytest.raises(ParseError, match="line 2"):
        parse_records(data, strict=True)


@pytest.mark.parametrize("line", ["0,200,0", "0,0,-91", "nan,0,0", "0,1", "x,1,2", "0,1,2,3"])
def test_malformed_variants(line):
    assert parse_records(f"timestamp,lon,lat\n{line}\n".encode()).skipped == 1


def test_unreadable_source(tmp_path):
    with pytest.raises(OSError):
        parse_records(tmp_path / "missing.csv")


def test_timestamp_roundtrip():
    assert format_timestamp(parse_timestamp("2016-03-24T07:05:09Z")) == "2016-03-24T07:05:09Z"
    assert parse_timestamp("2016-01-01T00:00:00Z") == T0 == 1451606400.0


def test_write_then_parse(tmp_path):
    recs = [AccidentRecord(1451606400.0 + i, 116.2 + 0.01 * i, 39.8 + 0.003 * i) for i in range(5)]
    write_records(recs, tmp_path / "e.csv")
    assert parse_records(tmp_path / "e.csv").records == recs


def test_default_scales():
    g = GridSpec(116.2, 39.8, 2, 2, 0.0)
    assert g.meters_per_deg_lat == 111320.0
    assert g.meters_per_deg_lon == pytest.approx(111320.0 * math.cos(math.radians(39.8)), rel=1e-15)


@pytest.mark.parametrize("kw", [dict(n_rows=0), dict(cell_size_m=0.0), dict(slot_seconds=-1.0),
                                dict(meters_per_deg_lat=-5.0)])
def test_invalid_grid(kw):
    base = dict(origin_lon=0.0, origin_lat=0.0, n_rows=2, n_cols=2, time_origin=0.0)
    with pytest.raises(ValueError):
        GridSpec(**{**base, **kw})


def test_origin_record_lands_in_first_cell():
    cube = discretize([AccidentRecord(0.0, 0.0, 0.0)], UNIT, n_slots=3)
    expected = np.zeros((4, 3, 3), dtype=np.int64)
    expected[0, 0, 0] = 1
    np.testing.assert_array_equal(cube.counts, expected)


def test_no_records_gives_zero_cube(caplog):
    cube = discretize([], UNIT, n_slots=5)
    assert cube.counts.shape == (4, 3, 5) and cube.counts.sum() == 0
    assert "all zero" in caplog.text
    assert discretize([], UNIT).n_slots == 0


def test_three_in_one_cell():
    recs = [AccidentRecord(12.0 + i, 1.5, 2.5) for i in range(3)]
    cube = discretize(recs, UNIT)
    assert cube.counts[2, 1, 1] == 3 and cube.counts.sum() == 3


def test_boundary_goes_to_higher_cell():
    cube = discretize([AccidentRecord(10.0, 1.0, 2.0)], UNIT, n_slots=3)
    assert cube.counts[2, 1, 1] == 1 and cube.counts.sum() == 1


def test_out_of_bounds_dropped(caplog):
    recs = [AccidentRecord(0.0, 3.0, 0.5), AccidentRecord(0.0, 0.5, -0.1), AccidentRecord(-1.0, 0.5, 0.5),
            AccidentRecord(0.0, 0.5, 0.5)]
    cube = discretize(recs, UNIT, n_slots=2)
    assert cube.dropped == 3 and cube.counts.sum() == 1
    assert "dropped 3" in caplog.text


records_st = st.lists(
    st.tuples(st.floats(-20, 60), st.floats(-0.5, 3.5), st.floats(-0.5, 4.5)), max_size=60)


@settings(max_examples=60, deadline=None)
@given(records_st, st.randoms(use_true_random=False))
def test_conservation_and_order_independence(rows, rnd):
    recs = [AccidentRecord(t, lon, lat) for t, lon, lat in rows]
    cube = discretize(recs, UNIT, n_slots=5)
    assert cube.counts.sum() + cube.dropped == len(recs)
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert discretize(shuffled, UNIT, n_slots=5) == cube


def test_cube_roundtrip(tmp_path, rng):
    cube = CountCube(rng.integers(0, 9, (4, 3, 7)), UNIT)
    save_cube(cube, tmp_path / "c.cube")
    back = load_cube(tmp_path / "c.cube")
    assert back == cube
    assert back.grid == UNIT
    save_cube(back, tmp_path / "d.cube")
    assert (tmp_path / "c.cube").read_bytes() == (tmp_path / "d.cube").read_bytes()


def test_zero_slot_cube_roundtrip(tmp_path):
    cube = CountCube(np.zeros((4, 3, 0), dtype=np.int64), UNIT)
    save_cube(cube, tmp_path / "z.cube")
    assert load_cube(tmp_path / "z.cube") == cube


def test_cube_file_errors(tmp_path):
    cube = CountCube(np.ones((4, 3, 2), dtype=np.int64), UNIT)
    save_cube(cube, tmp_path / "c.cube")
    raw = (tmp_path / "c.cube").read_bytes()
    bad = tmp_path / "bad.cube"
    bad.write_bytes(b"NOTCUBE!" + raw[8:])
    with pytest.raises(FormatError, match="magic"):
        load_cube(bad)
    bad.write_bytes(raw[:8] + struct.pack("<I", 99) + raw[12:])
    with pytest.raises(FormatError, match="version"):
        load_cube(bad)
    bad.write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="size"):
        load_cube(bad)
    bad.write_bytes(raw[:10])
    with pytest.raises(FormatError, match="truncated"):
        load_cube(bad)
