import math

import numpy as np
import pytest

from nsdimer.physics.lindblad import DensityMatrix, IntegratorConfig
from nsdimer.physics.model import ModelParams, build_operators

TWO_PI = 2 * math.pi


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def params():
    return ModelParams(N=4)


@pytest.fixture
def ops(params):
    return build_operators(params.N)


@pytest.fixture
def coarse():
    """200 steps per period, no transient window."""
    return IntegratorConfig(dt=TWO_PI / 200, transient_periods=0)


def random_density(dim: int, rng: np.random.Generator) -> DensityMatrix:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return DensityMatrix(rho / np.trace(rho))


def random_matrix(dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
