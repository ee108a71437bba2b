import numpy as np
import pytest

from spiralis.grids import BetaGrid, PGrid
from spiralis.linear_solve import VorticityData, solve_linearized
from spiralis.fields import SolutionState
from spiralis.modes import FlowParams


@pytest.fixture(scope="session")
def pgrid():
    return PGrid()


@pytest.fixture(scope="session")
def params_mu1():
    return FlowParams(1.0, 8, 2)


@pytest.fixture(scope="session")
def small_bgrid():
    return BetaGrid(40.0, 0.05)


@pytest.fixture(scope="session")
def background_state(params_mu1, small_bgrid):
    return SolutionState(
        params_mu1, VorticityData.background(params_mu1), (), small_bgrid, u_points=64
    )


@pytest.fixture(scope="session")
def linear_state(params_mu1, small_bgrid):
    """Background plus the linear response to a small single-harmonic datum."""
    eps = 1e-2
    vort = VorticityData.from_harmonics(
        8, params_mu1.base_vorticity, {8: eps * (0.3 + 0.1j)}
    )
    bundles = solve_linearized(params_mu1, vort)
    return SolutionState(params_mu1, vort, (bundles,), small_bgrid, u_points=64)
