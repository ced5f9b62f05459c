import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ctlab.grid import Grid  # noqa: E402
from ctlab.measures import make_pair, sigma_quadrature  # noqa: E402

ORACLE_F = {"family": "uniform_box", "lo": [0.0], "hi": [1.0]}
ORACLE_G = {"family": "uniform_box", "lo": [0.25], "hi": [0.75]}
GAUSS_F = {"family": "truncated_gaussian", "mean": [0.35, 0.4], "stddev": 0.12}
GAUSS_G = {"family": "truncated_gaussian", "mean": [0.65, 0.6], "stddev": 0.12}


@pytest.fixture(scope="session")
def oracle_pair():
    return make_pair(Grid(1, 512), ORACLE_F, ORACLE_G)


@pytest.fixture(scope="session")
def oracle_sigma(oracle_pair):
    return sigma_quadrature(oracle_pair, 128)


@pytest.fixture(scope="session")
def gauss_pair_32():
    return make_pair(Grid(2, 32), GAUSS_F, GAUSS_G)


@pytest.fixture(scope="session")
def gauss_sigma_32(gauss_pair_32):
    return sigma_quadrature(gauss_pair_32, 128)
