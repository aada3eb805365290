import numpy as np
import pytest

from asgdiff.schedule import make_schedule
from asgdiff.tensor import RngState


@pytest.fixture
def rng():
    return RngState(1234)


@pytest.fixture(scope="session")
def sched():
    return make_schedule(1000, 1e-4, 0.02)


def rand_latent(shape, seed):
    from asgdiff.tensor import randn

    return randn(shape, RngState(seed))


@pytest.fixture
def latent_pair():
    return rand_latent((2, 6, 6), 11), rand_latent((2, 6, 6), 12)


def assert_all_equal(a: np.ndarray, b: np.ndarray):
    assert a.shape == b.shape
    assert np.array_equal(a, b)
