import numpy as np
import pytest

from tarisk.ingest import GridSpec, parse_timestamp
from tarisk.synth import Hotspot, SynthConfig

T0 = parse_timestamp("2016-01-01T00:00:00Z")


@pytest.fixture
def grid():
    return GridSpec(116.2, 39.8, 6, 5, T0)


@pytest.fixture
def small_synth(grid):
    return SynthConfig(grid, n_days=10, seed=3, hotspots=[Hotspot(2, 2, 2.0, 1.5)], base_rate=0.02)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report lines, filled in by test_acceptance.criterion()
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
