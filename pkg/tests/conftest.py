import numpy as np
import pytest

from binjump.discretization import TorusGrid
from binjump.kernel import ConstantKernel, example_kernel


@pytest.fixture(scope="session")
def g4():
    return TorusGrid(1, 1.0, 4)


@pytest.fixture(scope="session")
def g8():
    return TorusGrid(1, 1.0, 8)


@pytest.fixture(scope="session")
def g16():
    return TorusGrid(1, 1.0, 16)


@pytest.fixture(scope="session")
def ek8(g8):
    return example_kernel(g8)


@pytest.fixture(scope="session")
def ek16(g16):
    return example_kernel(g16)


@pytest.fixture(scope="session")
def const8(g8):
    return ConstantKernel(g8, 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
