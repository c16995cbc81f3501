import numpy as np
import pytest

from torusdns.lp import get_lp
from torusdns.solver import random_divfree_field
from torusdns.spectral import TorusGrid


@pytest.fixture(scope="session")
def grid32():
    return TorusGrid(32, 1.0)


@pytest.fixture(scope="session")
def grid16():
    return TorusGrid(16, 1.0)


@pytest.fixture(scope="session")
def lp32(grid32):
    return get_lp(grid32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def make_field(grid, seed=0, amplitude=0.5, k_peak=4.0):
    return random_divfree_field(grid, seed=seed, amplitude=amplitude, k_peak=k_peak)


@pytest.fixture
def field32(grid32):
    return make_field(grid32, seed=42)
