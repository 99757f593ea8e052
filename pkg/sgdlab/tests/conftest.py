# sgdlab/tests/conftest.py
import math

import numpy as np
import pytest

from sgdlab.app import models


@pytest.fixture
def example1():
    return models.make_example1()


@pytest.fixture
def example2():
    return models.make_example2()


@pytest.fixture
def ou():
    return models.make_ou_family()


@pytest.fixture
def noiseless():
    return models.make_noiseless()


@pytest.fixture
def minibatch():
    return models.make_minibatch_example()


@pytest.fixture
def sin_phi():
    return models.get_observable("sin")


@pytest.fixture
def small_chunks(monkeypatch):
    monkeypatch.setenv("SGDLAB_CHUNK_SIZE", "257")


def example1_sin_mean(x: float, eta: float, n: int) -> float:
    """E sin(X_n) for Example 1 from the characteristic function of the Rademacher sum."""
    m_n = 0.5 + (1.0 - eta) ** n * (x - 0.5)
    return math.sin(m_n) * math.prod(math.cos(eta * (1.0 - eta) ** j / 2.0) for j in range(n))


def central_difference(fn, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Derivative of a scalar-valued fn at one-dimensional points of shape (n, 1); returns shape (n,)."""
    step = h[..., 0]
    forward = np.reshape(fn(x + h), step.shape)
    backward = np.reshape(fn(x - h), step.shape)
    return (forward - backward) / (2.0 * step)
