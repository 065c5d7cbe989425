import math

import numpy as np
import pytest

from hopnav.descriptor import HogParams, build_table
from hopnav.geodata import GeoMap
from hopnav.simulator import SimConfig, simulate, synthetic_map

# mild perturbation of the standard flight: gamma jitter, sensor noise, 0.5 deg yaw noise
MILD = dict(gamma_range=(0.9, 1.1), noise_sigma=4.0, yaw_sigma_rad=math.radians(0.5))


@pytest.fixture(scope="session")
def village():
    """Full-size synthetic reference map (850 x 500 px at 3.15 px/m)."""
    return synthetic_map(850, 500, 3.15, seed=0)


@pytest.fixture(scope="session")
def village_table(village):
    return build_table(village, HogParams())


@pytest.fixture(scope="session")
def standard_flight(village):
    """Seeded 3-minute lawnmower flight (900 frames) over the village map."""
    return simulate(SimConfig(**MILD, seed=0), village)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def textured_map(w, h, seed=0, px_per_m=3.15):
    return synthetic_map(w, h, px_per_m, seed=seed)


def random_map(w, h, seed=0, px_per_m=3.15):
    r = np.random.default_rng(seed)
    return GeoMap(r.integers(0, 256, (h, w), dtype=np.uint8), px_per_m)


def pytest_terminal_summary(terminalreporter):
    """Collect the acceptance PASS/FAIL lines from captured output into one section."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call" and "test_acceptance" in rep.nodeid:
                lines += [ln for ln in rep.capstdout.splitlines() if ln.startswith(("PASS ", "FAIL "))]
    if lines:
        terminalreporter.section("acceptance criteria")
        for ln in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(ln)
