import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, cond=10.0):
    """Random SPD matrix with controlled conditioning."""
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eigs = np.geomspace(1.0, cond, n)
    return (q * eigs) @ q.T


@pytest.fixture
def spd_factory(rng):
    def make(n, cond=10.0):
        return random_spd(rng, n, cond)

    return make
