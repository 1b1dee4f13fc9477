import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pcv.verify import pricing_fixture

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def book_fixture():
    return pricing_fixture(303, n=2, ell=2, p=1, T=8)


@pytest.fixture(scope="session")
def price_fixture():
    return pricing_fixture(304, n=2, ell=2, p=2, T=8, conv="price")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
