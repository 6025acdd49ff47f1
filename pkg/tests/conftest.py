import numpy as np
import pytest

from nlselab.grid import DomainSpec, build_grid
from nlselab.ground_state import GroundStateOptions, minimize_on_sphere
from nlselab.model import ModelSpec, Nonlinearity, Potential


@pytest.fixture(scope="session")
def sin3():
    return ModelSpec(W=Nonlinearity("sin_power", 3.0), alpha=1.0, sigma=1.0)


@pytest.fixture(scope="session")
def quad_model(sin3):
    return sin3.with_(V=Potential("quadratic", 1.0, (0.0,)))


@pytest.fixture(scope="session")
def grid1d():
    return build_grid(DomainSpec.box([-1.0], [1.0]), 201)


@pytest.fixture(scope="session")
def grid2d():
    return build_grid(DomainSpec.box([-1.0, -1.0], [1.0, 1.0]), 41)


@pytest.fixture(scope="session")
def ground1d(sin3, grid1d):
    return minimize_on_sphere(sin3, grid1d, 1.0, GroundStateOptions(tol_res=1e-10, n_starts=2))


@pytest.fixture(scope="session")
def ground2d(sin3, grid2d):
    return minimize_on_sphere(sin3, grid2d, 1.0, GroundStateOptions(tol_res=1e-10, n_starts=2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
