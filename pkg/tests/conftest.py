import pytest

from hybridse import data
from hybridse.grid import load_grid
from hybridse.powerflow import load_profile


@pytest.fixture(scope="session")
def toy2():
    return load_grid(data.path(data.TOY2_AC))


@pytest.fixture(scope="session")
def toy5():
    return load_grid(data.path(data.TOY5_HYBRID))


@pytest.fixture(scope="session")
def toy5_loads():
    return load_profile(data.path(data.TOY5_HYBRID_LOADS))


@pytest.fixture(scope="session")
def case33():
    return load_grid(data.path(data.CASE33_HYBRID))


@pytest.fixture(scope="session")
def case33_loads():
    return load_profile(data.path(data.CASE33_HYBRID_LOADS))
