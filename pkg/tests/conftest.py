import math

import numpy as np
import pytest

from axing.needlets import NeedletFrame
from axing.splines import simulation_basis


@pytest.fixture(scope="session")
def frame23():
    return NeedletFrame(B=2.0, J0=2, J=3)


@pytest.fixture(scope="session")
def basis():
    return simulation_basis()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def pair_with_dot(rng, u):
    """Two random unit vectors with inner product u."""
    p = random_unit(rng, 1)[0]
    w = rng.standard_normal(3)
    w -= (w @ p) * p
    w /= np.linalg.norm(w)
    return p, u * p + math.sqrt(1.0 - u * u) * w
