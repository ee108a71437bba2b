import json

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from spiralis.errors import ConfigError, DataError
from spiralis.grids import BetaGrid, PGrid
from spiralis.measures import (
    SpectralMeasure,
    eval_measures,
    physical_to_spectral,
    raised_cosine_taper,
)


@pytest.fixture(scope="module")
def grid():
    return PGrid()


@pytest.fixture(scope="module")
def bgrid():
    return BetaGrid()


def indicator_12(grid):
    """1_[1,2] with midpoint values at the jump nodes (mass exactly 1)."""
    p = grid.nodes
    dens = ((p > 1.0) & (p < 2.0)).astype(np.complex128)
    dens[grid.index_of(1.0)] = 0.5
    dens[grid.index_of(2.0)] = 0.5
    return SpectralMeasure.from_density(grid, dens)


def test_constant_mode_evaluates_to_one(grid):
    m = SpectralMeasure.delta(grid, 0.0, 1.0)
    assert m.eval_at_beta(0.37) == 1.0
    assert m.eval_at_beta(123.4) == 1.0


def test_derivative_weight_kills_constant(grid):
    m = SpectralMeasure.delta(grid, 0.0, 1.0)
    # q = i p beta is the beta d/dbeta weight
    assert m.eval_at_beta(5.0, weight=[(1j, 1, 1)]) == 0.0


def test_unit_hat_evaluates_to_its_mass(grid):
    p = grid.nodes
    hat = np.clip(1.0 - np.abs(p - 1.0) / 0.05, 0.0, None)
    hat /= np.trapezoid(hat, dx=grid.h_p)
    m = SpectralMeasure.from_density(grid, hat.astype(np.complex128))
    assert abs(m.eval_at_beta(0.0) - 1.0) < 1e-12


def test_l1_norm_single_atom(grid):
    assert SpectralMeasure.delta(grid, 2.0, -3.0).l1_delta_norm() == 3.0


def test_l1_norm_zero_measure(grid):
    assert SpectralMeasure.zero(grid).l1_delta_norm() == 0.0


def test_l1_norm_indicator(grid):
    assert abs(indicator_12(grid).l1_delta_norm() - 1.0) < 1e-9


def test_norm_triangle_inequality(grid):
    rng = np.random.default_rng(3)
    a = SpectralMeasure(
        grid, ((0.5, 1.0 + 2.0j),), rng.normal(size=grid.size) + 0j
    )
    b = SpectralMeasure(
        grid, ((0.5, -1.0j), (3.0, 2.0)), rng.normal(size=grid.size) + 0j
    )
    assert (a + b).l1_delta_norm() <= a.l1_delta_norm() + b.l1_delta_norm() + 1e-12


@settings(max_examples=25, deadline=None)
@given(
    ar=st.floats(-3, 3), ai=st.floats(-3, 3),
    br=st.floats(-3, 3), bi=st.floats(-3, 3),
)
def test_eval_linearity(ar, ai, br, bi):
    grid = PGrid(10.0, 0.1)
    p = grid.nodes
    m1 = SpectralMeasure(grid, ((0.0, 1.0),), np.exp(-p**2).astype(complex))
    m2 = SpectralMeasure(grid, ((2.0, 1.0j),), np.cos(p) * np.exp(-0.5 * p**2))
    a = complex(ar, ai)
    b = complex(br, bi)
    beta = 1.7
    lhs = (a * m1 + b * m2).eval_at_beta(beta)
    rhs = a * m1.eval_at_beta(beta) + b * m2.eval_at_beta(beta)
    assert abs(lhs - rhs) <= 1e-10 * (1.0 + abs(lhs))


def test_hermitian_measure_evaluates_real(grid):
    p = grid.nodes
    dens = np.exp(-(p**2)) * (1.0 + 0.3j * p)  # f(-p) = conj f(p)
    m = SpectralMeasure(grid, ((1.0, 1.0 + 1.0j), (-1.0, 1.0 - 1.0j)), dens)
    assert m.is_hermitian(1e-12)
    vals = m.eval_at_beta(np.linspace(-30.0, 30.0, 7))
    assert np.abs(vals.imag).max() < 1e-12


def test_physical_to_spectral_constant(bgrid, grid):
    samples = np.full(bgrid.size, 4.0, dtype=complex)
    m = physical_to_spectral(samples, bgrid, grid)
    (xi, w), = m.atoms
    assert xi == 0.0 and abs(w - 4.0) < 1e-12
    assert np.abs(m.density).max() < 1e-12


def test_physical_to_spectral_oscillatory(bgrid, grid):
    b = bgrid.nodes
    samples = np.exp(1j * b) / np.cosh(b / 5.0)
    m = physical_to_spectral(samples, bgrid, grid)
    peak = grid.nodes[np.argmax(np.abs(m.density))]
    assert abs(peak - 1.0) < 2 * grid.h_p
    analytic = 2.5 / np.cosh(5 * np.pi * (grid.nodes - 1.0) / 2.0)
    assert np.abs(m.density - analytic).max() < 1e-10
    assert sum(abs(w) for _, w in m.atoms) < 1e-10


def test_roundtrip_band_limited(bgrid, grid):
    b = bgrid.nodes
    f = 2.0 + 1.0 / np.cosh(b / 5.0)
    m = physical_to_spectral(f.astype(complex), bgrid, grid)
    back = m.eval_at_beta(b)
    sel = np.abs(b) <= 0.8 * bgrid.b_max
    rel = np.abs(back - f)[sel].max() / np.abs(f).max()
    assert rel <= 1e-3


def test_physical_to_spectral_rejects_nan(bgrid, grid):
    samples = np.zeros(bgrid.size, dtype=complex)
    samples[3] = np.nan
    with pytest.raises(DataError):
        physical_to_spectral(samples, bgrid, grid)


def test_atom_merging_and_location_check(grid):
    m = SpectralMeasure(grid, ((1.0, 2.0), (1.0, 3.0)), np.zeros(grid.size))
    assert m.atoms == ((1.0, 5.0 + 0j),)
    with pytest.raises(ConfigError):
        SpectralMeasure(grid, ((grid.p_max * 2, 1.0),), np.zeros(grid.size))


def test_json_roundtrip(grid):
    p = grid.nodes
    m = SpectralMeasure(grid, ((0.0, 1.5 - 2.0j),), np.exp(-(p**2)) * (1 + 1j))
    blob = json.dumps(m.to_json_dict())
    back = SpectralMeasure.from_json_dict(json.loads(blob))
    assert back.atoms == m.atoms
    assert np.array_equal(back.density, m.density)


def test_taper_shape(bgrid):
    t = raised_cosine_taper(bgrid)
    inner = np.abs(bgrid.nodes) <= (1 - bgrid.w_taper) * bgrid.b_max
    assert np.all(t[inner] == 1.0)
    assert t[0] < 1e-12 and t[-1] < 1e-12


def test_eval_measures_stack(grid):
    m1 = SpectralMeasure.delta(grid, 0.0, 2.0)
    m2 = SpectralMeasure.delta(grid, 1.0, 1.0)
    betas = np.array([0.0, 1.0, 2.0])
    out = eval_measures([m1, m2], betas)
    assert np.allclose(out[0], 2.0)
    assert np.allclose(out[1], np.exp(1j * betas))
