import numpy as np
import pytest

from helpers import random_spd


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def spd_factory(rng):
    return lambda d, spread=1.0: random_spd(rng, d, spread)
