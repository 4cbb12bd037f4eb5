import numpy as np
import pytest

from touchloc.fixtures import fixture_mesh
from touchloc.measurement import NoiseParams


@pytest.fixture(scope="session")
def box():
    return fixture_mesh("box")


@pytest.fixture(scope="session")
def back():
    return fixture_mesh("back")


@pytest.fixture(scope="session")
def register():
    return fixture_mesh("register")


@pytest.fixture(scope="session", params=["box", "back", "register"])
def any_fixture(request):
    return fixture_mesh(request.param)


@pytest.fixture
def noise():
    return NoiseParams(2.0, 0.09)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
