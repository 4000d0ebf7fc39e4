import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsmor.grid import (
    Grid,
    Triangulation,
    gauss_legendre,
    gauss_legendre_2d,
    make_grid_1d,
    make_grid_2d,
    project_to_cells,
)


def test_grid_1d_wave_spacing():
    g = make_grid_1d(-0.3, 3.0, 1000)
    assert g.dx == pytest.approx(3.3e-3)
    assert g.n_cells == 1000


def test_grid_1d_single_cell():
    g = make_grid_1d(0.0, 1.0, 1)
    np.testing.assert_array_equal(g.centers[:, 0], [0.5])


def test_grid_1d_centres():
    g = make_grid_1d(0.0, 1.0, 4)
    np.testing.assert_allclose(g.centers[:, 0], [0.125, 0.375, 0.625, 0.875], rtol=0, atol=1e-15)


@pytest.mark.parametrize("args", [(1.0, 0.0, 4), (0.0, 0.0, 4), (0.0, 1.0, 0), (0.0, np.inf, 3)])
def test_grid_1d_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        make_grid_1d(*args)


def test_grid_2d_tensor_layout():
    g = make_grid_2d((0.0, 2.0), (0.0, 1.0), 4, 2)
    assert g.n_cells == 8
    np.testing.assert_allclose(g.h, [0.5, 0.5])
    # x-major ordering: cell index i * ny + j
    np.testing.assert_allclose(g.centers[3], [0.75, 0.75])
    assert g.cell_volume == pytest.approx(0.25)


def test_grid_roundtrip_dict():
    g = make_grid_2d((-0.1, 1.5), (-0.1, 1.5), 7, 5)
    assert Grid.from_dict(g.to_dict()) == g


def test_quadrature_unit_integrand():
    q = gauss_legendre_2d(3)
    assert q.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_quadrature_x5_exact():
    q = gauss_legendre(3, 1)
    assert np.sum(q.weights * q.points[:, 0] ** 5) == pytest.approx(1 / 6, rel=1e-14)


def test_quadrature_nodes_are_mapped_legendre_roots():
    # independent oracle: roots of P3 are 0 and +-sqrt(3/5)
    roots = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
    q = gauss_legendre(3, 1)
    np.testing.assert_allclose(np.sort(q.points[:, 0]), 0.5 * (roots + 1.0), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(
    order=st.integers(1, 5),
    coeffs=st.lists(st.floats(-3, 3), min_size=1, max_size=10),
    coeffs_y=st.lists(st.floats(-3, 3), min_size=1, max_size=10),
)
def test_quadrature_exact_for_polynomials_within_degree(order, coeffs, coeffs_y):
    deg = 2 * order - 1
    a = np.asarray(coeffs[: deg + 1])
    b = np.asarray(coeffs_y[: deg + 1])
    q = gauss_legendre_2d(order)
    x, y = q.points[:, 0], q.points[:, 1]
    px = np.polynomial.polynomial.polyval(x, a)
    py = np.polynomial.polynomial.polyval(y, b)
    exact_x = np.sum(a / np.arange(1, len(a) + 1))
    exact_y = np.sum(b / np.arange(1, len(b) + 1))
    got = np.sum(q.weights * px * py)
    assert got == pytest.approx(exact_x * exact_y, rel=1e-12, abs=1e-12)


def test_project_constant():
    g = make_grid_2d((0, 1), (0, 1), 5, 3)
    vals = project_to_cells(lambda p: np.full(len(p), 2.5), g, gauss_legendre_2d(3))
    np.testing.assert_allclose(vals, 2.5, rtol=1e-15)


def test_project_linear_equals_centre_values():
    g = make_grid_2d((0, 1), (0, 2), 6, 4)
    f = lambda p: 3.0 * p[:, 0] - 1.0
    vals = project_to_cells(f, g, gauss_legendre_2d(3))
    np.testing.assert_allclose(vals, f(g.centers), atol=1e-14)


def test_project_x_squared_two_cells():
    g = make_grid_1d(0.0, 1.0, 2)
    vals = project_to_cells(lambda p: p[:, 0] ** 2, g, gauss_legendre(3, 1))
    # analytic cell averages of x^2 on [0, 1/2] and [1/2, 1]
    np.testing.assert_allclose(vals, [1 / 12, 7 / 12], rtol=1e-14)


def test_project_reproduces_aligned_piecewise_constant():
    g = make_grid_2d((0, 1), (0, 1), 4, 4)
    rng = np.random.default_rng(3)
    table = rng.normal(size=(4, 4))
    f = lambda p: table[np.minimum((p[:, 0] * 4).astype(int), 3), np.minimum((p[:, 1] * 4).astype(int), 3)]
    np.testing.assert_allclose(project_to_cells(f, g, gauss_legendre_2d(3)), table.ravel(), rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(nx=st.integers(1, 50), ny=st.integers(1, 50))
def test_triangulation_counts_and_orientation(nx, ny):
    tri = Triangulation.from_grid(make_grid_2d((0, 1), (0, 1), nx, ny))
    assert tri.n_vertices == (nx + 1) * (ny + 1)
    assert tri.n_simplices == 2 * nx * ny
    assert np.all(tri.signed_volumes() > 0)


def test_p1_interpolation_reproduces_linear_functions():
    g = make_grid_2d((0, 1), (0, 1), 5, 7)
    tri = Triangulation.from_grid(g)
    f = lambda p: 1.0 + 2.0 * p[:, 0] - 0.5 * p[:, 1]
    pts = np.random.default_rng(0).random((200, 2))
    P = tri.interpolation_matrix(pts)
    np.testing.assert_allclose(P @ f(tri.vertices), f(pts), atol=1e-13)


def test_evaluate_linear_exact_for_linear_interior():
    g = make_grid_1d(0.0, 1.0, 10)
    vals = 2.0 * g.centers[:, 0] + 1.0
    pts = np.linspace(0.1, 0.89, 17)[:, None]  # interior cells; boundary slopes see the zero ghost
    np.testing.assert_allclose(g.evaluate_linear(vals, pts), 2.0 * pts[:, 0] + 1.0, atol=1e-13)


def test_cell_average_of_linear_reconstruction_returns_cell_values():
    g = make_grid_2d((0, 1), (0, 1), 6, 6)
    rule = gauss_legendre_2d(3)
    u = np.random.default_rng(1).normal(size=g.n_cells)
    pts = g.quadrature_points(rule)
    np.testing.assert_allclose(g.cell_average(g.evaluate_linear(u, pts), rule), u, atol=1e-13)
