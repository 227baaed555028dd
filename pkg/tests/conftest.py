import math

import numpy as np
import pytest

from nearfield_sim.config import FeedModel, SweepPlan, default_config

WAVELENGTH = 0.010714


@pytest.fixture
def small_config():
    """About 100 elements: quick enough for end-to-end runs."""
    return default_config(aperture_diameter=0.06, layer_count=2,
                          sweep=SweepPlan(num_points=8, layer_counts=(1, 2)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def uniform_feed():
    return FeedModel(kind="uniform_plane")


def rel_err(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / np.max(np.abs(b)))


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed after the run."""
    def record(number, passed, detail):
        ACCEPTANCE_LINES.append((number, f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line)
