import struct
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tarisk.ingest import CountCube, FormatError, GridSpec
from tarisk.risk import build_samples, chrono_split, load_store, risk_cube, save_store

from conftest import T0

HOUR = 3600.0


def _cube(counts, n_rows=None, n_cols=None):
    counts = np.asarray(counts, dtype=np.int64)
    g = GridSpec(116.2, 39.8, counts.shape[0], counts.shape[1], T0)
    return CountCube(counts, g)


def test_five_accidents_over_three_days():
    # 5 events in the 08:00 slot spread over the previous three days
    counts = np.zeros((1, 1, 24 * 4), dtype=np.int64)
    counts[0, 0, 8] = 2
    counts[0, 0, 24 + 8] = 1
    counts[0, 0, 48 + 8] = 2
    r = risk_cube(_cube(counts), 3)
    assert abs(r.values[0, 0, 72 + 8] - 5 / 3) <= 1e-12


def test_zero_counts_zero_risk():
    r = risk_cube(_cube(np.zeros((2, 2, 80))), 2)
    assert np.all(r.values[:, :, 48:] == 0)
    assert np.isnan(r.values[:, :, :48]).all()


def test_single_day_is_shifted_counts(rng):
    counts = rng.poisson(1.0, (2, 3, 60))
    r = risk_cube(_cube(counts), 1)
    np.testing.assert_array_equal(r.values[:, :, 24:], counts[:, :, :36])


@pytest.mark.parametrize("d,n", [(0, 100), (2, 48), (1, 10)])
def test_risk_cube_errors(d, n):
    with pytest.raises(ValueError):
        risk_cube(_cube(np.zeros((1, 1, n))), d)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 5))
def test_risk_linear_and_sum_check(seed, d, c):
    counts = np.random.default_rng(seed).poisson(0.7, (2, 2, 24 * d + 30))
    r = risk_cube(_cube(counts), d)
    lag = 24 * d
    np.testing.assert_allclose(risk_cube(_cube(counts * c), d).values[:, :, lag:], c * r.values[:, :, lag:],
                               rtol=1e-12)
    # exact rational oracle for one cell
    for t in range(lag, counts.shape[2]):
        want = Fraction(int(sum(counts[1, 0, t - 24 * k] for k in range(1, d + 1))), d)
        assert abs(r.values[1, 0, t] - float(want)) <= 1e-12
    assert d * np.nansum(r.values[0, 1]) == pytest.approx(
        sum(counts[0, 1, lag - 24 * k:counts.shape[2] - 24 * k].sum() for k in range(1, d + 1)), rel=1e-9)


def test_constant_risk_samples():
    counts = np.full((2, 2, 24 + 30), 3)
    store = build_samples(risk_cube(_cube(counts), 1), 5)
    assert np.all(store.sequences == 3) and np.all(store.targets == 3)


def test_corner_coords():
    store = build_samples(risk_cube(_cube(np.ones((3, 4, 40))), 1), 2)
    first = {(r, c): tuple(xy) for r, c, xy in zip(store.rows, store.cols, store.coords)}
    assert first[(0, 0)] == (0.0, 0.0) and first[(2, 3)] == (1.0, 1.0)
    assert np.all((store.coords >= 0) & (store.coords <= 1))


def test_one_cell_count_matches_enumeration(rng):
    counts = rng.poisson(1.0, (1, 1, 24 + 50))
    r = risk_cube(_cube(counts), 1)
    store = build_samples(r, 10)
    n_defined = 50
    assert len(store) == n_defined - 10
    for i in range(len(store)):
        t = store.slots[i]
        np.testing.assert_array_equal(store.sequences[i], r.values[0, 0, t - 10:t])
        assert store.targets[i] == r.values[0, 0, t]


def test_samples_ordered_and_readonly(rng):
    store = build_samples(risk_cube(_cube(rng.poisson(1.0, (2, 3, 60))), 1), 4)
    key = list(zip(store.slots, store.rows, store.cols))
    assert key == sorted(key)
    assert not store.sequences.flags.writeable
    assert np.isfinite(store.sequences).all() and (store.sequences >= 0).all()
    sub = build_samples(risk_cube(_cube(rng.poisson(1.0, (2, 3, 60))), 1), 4, slots=[40, 45])
    assert sorted(set(sub.slots)) == [40, 45] and len(sub) == 12


def test_no_valid_samples():
    with pytest.raises(ValueError, match="no valid samples"):
        build_samples(risk_cube(_cube(np.zeros((1, 1, 30))), 1), 6)


def _split_store(n_pre=100, n_test=10):
    # one cell, first sample slot 25 -> 100 pre-test slots, then the test range
    counts = np.zeros((1, 1, 24 + 1 + n_pre + n_test))
    store = build_samples(risk_cube(_cube(counts), 1), 1)
    train_end = T0 + (25 + n_pre) * HOUR
    return store, train_end, train_end + n_test * HOUR


def test_twenty_percent_validation():
    store, a, b = _split_store()
    split = chrono_split(store, a, b)
    assert len(np.unique(store.slots[split.train])) == 80
    assert len(np.unique(store.slots[split.validation])) == 20
    assert len(split.test) == 10
    assert store.slots[split.train].max() < store.slots[split.validation].min() < store.slots[split.test].min()
    parts = [set(store.slots[i]) for i in (split.train, split.validation, split.test)]
    assert not (parts[0] & parts[1] or parts[1] & parts[2] or parts[0] & parts[2])
    assert split.validation_start == T0 + (25 + 80) * HOUR


def test_empty_partitions_fatal():
    store, a, b = _split_store()
    with pytest.raises(ValueError, match="empty"):
        chrono_split(store, b + 1000 * HOUR, b + 2000 * HOUR)
    with pytest.raises(ValueError, match="empty"):
        chrono_split(store, T0, b)
    with pytest.raises(ValueError):
        chrono_split(store, b, a)


def test_store_roundtrip(tmp_path, rng):
    store = build_samples(risk_cube(_cube(rng.poisson(1.0, (2, 2, 60))), 2), 3)
    save_store(store, tmp_path / "s.bin")
    back = load_store(tmp_path / "s.bin")
    for name in ("sequences", "coords", "targets", "rows", "cols", "slots"):
        np.testing.assert_array_equal(getattr(back, name), getattr(store, name))
    assert (back.window_days, back.time_origin, back.slot_seconds) == (2, T0, HOUR)
    raw = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "bad").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_store(tmp_path / "bad")
    (tmp_path / "bad").write_bytes(b"x" * 8 + raw[8:])
    with pytest.raises(FormatError, match="magic"):
        load_store(tmp_path / "bad")
    (tmp_path / "bad").write_bytes(raw[:8] + struct.pack("<I", 7) + raw[12:])
    with pytest.raises(FormatError, match="version"):
        load_store(tmp_path / "bad")
