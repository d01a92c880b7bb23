import numpy as np
import pytest

from tdoa_lab.geometry import build_random_square
from tdoa_lab.model import NoiseModel

ACCEPTANCE_LINES: list[str] = []


def random_config(rng, dims=(2, 3), n_range=(4, 20)):
    """One draw from the randomized ranges used throughout: sensors in a 10 m square/cube, source at the origin."""
    dim = int(rng.choice(dims))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    sigma_t = float(10 ** rng.uniform(-5, -3))
    sigma_loc = float(10 ** rng.uniform(-2, 0))
    arr = build_random_square(n, 10.0, None, dim, int(rng.integers(2**63)), source=np.zeros(dim))
    return np.zeros(dim), arr, NoiseModel(sigma_t, sigma_loc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
