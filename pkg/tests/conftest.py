import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def registry():
    from ywlab.measure_core import builtin_registry

    return builtin_registry()


@pytest.fixture
def grid100():
    return np.arange(101) / 100
