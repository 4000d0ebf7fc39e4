import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsmor.grid import Triangulation, gauss_legendre, make_grid_1d, make_grid_2d
from tsmor.invmap import (
    P1Projector,
    build_inverse_snapshot,
    fit_inverse_model,
    forward_jacobian_min,
    invert_pointwise,
    inverse_jacobian_min,
    predict_inverse,
    round_trip_error,
)
from tsmor.registration import DisplacementCoeffs, eval_displacement

GRID = make_grid_2d((-0.1, 1.5), (-0.1, 1.5), 12, 12)


def small_coeffs(seed, M=3, scale=0.05, grid=GRID):
    vals = scale * np.random.default_rng(seed).normal(size=(grid.dim, M**grid.dim))
    return DisplacementCoeffs(M, vals, grid.lower, grid.upper)


def test_zero_displacement_inverts_to_identity():
    x = GRID.quadrature_points(gauss_legendre(2, 2))
    y, res = invert_pointwise(DisplacementCoeffs.zeros(3, GRID), x)
    np.testing.assert_array_equal(y, x)
    assert np.all(res == 0.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_forward_generated_pairs_are_recovered(seed):
    c = small_coeffs(seed)
    assert forward_jacobian_min(c, GRID) > 0
    lo, hi = np.array(GRID.lower), np.array(GRID.upper)
    y_true = lo + (hi - lo) * np.random.default_rng(seed + 1).random((200, 2))
    x = y_true + eval_displacement(c, y_true)
    y, res = invert_pointwise(c, x)
    assert res.max() <= 1e-8
    np.testing.assert_allclose(y, y_true, atol=1e-8)


def test_1d_inverse_against_bisection_oracle():
    g = make_grid_1d(0.0, 1.0, 50)
    c = DisplacementCoeffs(2, np.array([[1.5, -0.8]]), g.lower, g.upper)
    x = np.linspace(0.0, 1.0, 41)[:, None]
    y, _ = invert_pointwise(c, x)
    from scipy.optimize import brentq

    phi = lambda s: s + eval_displacement(c, np.array([[s]]))[0, 0]
    oracle = [brentq(lambda s: phi(s) - xi, 0.0, 1.0, xtol=1e-14) if 0 < xi < 1 else xi for xi in x[:, 0]]
    np.testing.assert_allclose(y[:, 0], oracle, atol=1e-10)


def test_inverse_snapshot_properties():
    tri = Triangulation.from_grid(GRID)
    proj = P1Projector(tri, gauss_legendre(3, 2))
    zero = build_inverse_snapshot(DisplacementCoeffs.zeros(3, GRID), proj)
    assert np.all(zero.nodal == 0.0)
    c = small_coeffs(3)
    snap = build_inverse_snapshot(c, proj)
    assert snap.worst_residual <= 1e-8
    assert np.all(snap.nodal[:, tri.boundary] == 0.0)
    # P1 approximation of phi^{-1} gives a round trip well below a cell width
    assert round_trip_error(c, snap.nodal, proj) <= 0.1 * GRID.h.min()
    assert inverse_jacobian_min(snap.nodal, tri) > 0


def test_projector_reproduces_p1_fields_in_the_interior_space():
    tri = Triangulation.from_grid(GRID)
    proj = P1Projector(tri)
    nodal = np.random.default_rng(0).normal(size=tri.n_vertices)
    nodal[tri.boundary] = 0.0
    np.testing.assert_allclose(proj.project(proj.evaluate(nodal)), nodal, atol=1e-10)


def test_inverse_jacobian_identity():
    tri = Triangulation.from_grid(GRID)
    assert inverse_jacobian_min(np.zeros((2, tri.n_vertices)), tri) == pytest.approx(1.0)


def test_rank_one_inverse_model_is_exact():
    nv = 30
    rng = np.random.default_rng(1)
    shape = rng.normal(size=(2, nv))
    Z = np.linspace(0, 1, 8)[:, None]
    snaps = np.array([(1 + 2 * z[0]) * shape for z in Z])
    model = fit_inverse_model(snaps, Z, 1, restarts=1)
    z = np.array([0.37])
    np.testing.assert_allclose(predict_inverse(model, z), (1 + 2 * 0.37) * shape, atol=1e-5)
    assert np.all(predict_inverse(model, z, 0) == 0.0)
    with pytest.raises(ValueError):
        predict_inverse(model, z, 2)
    with pytest.raises(ValueError):
        fit_inverse_model(snaps, Z, 9)
