import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def perth_scene():
    from orbitradar.scenarios import PERTH, default_scene

    return default_scene((PERTH,))


@pytest.fixture(scope="session")
def overhead_pass():
    from orbitradar.scenarios import MWA, circular_pass

    return circular_pass(MWA, 800e3, np.radians(30), np.radians(70), np.radians(20))
