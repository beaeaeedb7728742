import numpy as np
import pytest

from app.core.ballmeasure import RadiusSchedule
from app.core.liegroup import LieContext


@pytest.fixture
def so3():
    return LieContext.special_orthogonal(3)


@pytest.fixture
def su2():
    return LieContext.special_unitary_2()


@pytest.fixture(params=["SO(3)", "SU(2)", "SO(4)"])
def ctx(request):
    return LieContext.from_spec(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def schedule():
    return RadiusSchedule.power_law(0.75)
