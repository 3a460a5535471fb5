import math

import pytest
from hypothesis import HealthCheck, settings

from statstab.hypotheses import default_hypotheses
from statstab.maps import make_builtin_family

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def cheb():
    return make_builtin_family("chebyshev")


@pytest.fixture(scope="session")
def lorenz():
    return make_builtin_family("lorenz_singular")


@pytest.fixture(scope="session")
def affine3():
    return make_builtin_family("affine_full", {"k": 3})


@pytest.fixture(scope="session")
def cheb_hyp():
    return default_hypotheses("chebyshev")


@pytest.fixture(scope="session")
def lorenz_hyp():
    return default_hypotheses("lorenz_singular")


E3 = math.exp(-3)
