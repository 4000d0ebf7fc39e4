import numpy as np
import pytest

from tsmor.grid import make_grid_1d, make_grid_2d
from tsmor.hf import (
    WAVE_A_SIGN,
    burgers_initial,
    get_test_case,
    sample_snapshots,
    solve_burgers_2d,
    solve_heat_2d,
    solve_wave_1d,
    tensor_samples,
    wave_exact,
    wave_initial,
)


def rel_l1(ref, approx):
    return np.sum(np.abs(ref - approx)) / np.sum(np.abs(ref))


@pytest.fixture(scope="module")
def wave_grid():
    return get_test_case("wave1d").make_grid()


def test_wave_zero_initial_stays_zero(wave_grid):
    traj = solve_wave_1d(wave_grid, 1.3, [0.0, 0.4, 0.8], initial=np.zeros((2, wave_grid.n_cells)))
    assert np.all(traj.values == 0.0)


def test_wave_linear_in_mu(wave_grid):
    t = [0.25, 0.8]
    a = solve_wave_1d(wave_grid, 0.6, t).values
    b = solve_wave_1d(wave_grid, 1.2, t).values
    np.testing.assert_allclose(b, 2.0 * a, rtol=0, atol=1e-12 * np.abs(b).max())


@pytest.mark.parametrize("a_sign, T", [(1.0, 0.3), (-1.0, 0.8)])
def test_wave_characteristic_oracle(wave_grid, a_sign, T):
    # u1 + u2 = sqrt(2) w2 and u1 - u2 = sqrt(2) w1, each advected along its
    # characteristic; with a_sign = +1 w2 moves right (and has left the
    # domain by t = 0.7, hence the shorter horizon) while w1 moves left.
    mu = 1.0
    x = wave_grid.centers[:, 0]
    u = solve_wave_1d(wave_grid, mu, [T], a_sign=a_sign).values[0]
    w1_0 = (wave_initial(x, mu)[0] - wave_initial(x, mu)[1]) / np.sqrt(2)
    w2_0 = (wave_initial(x, mu)[0] + wave_initial(x, mu)[1]) / np.sqrt(2)
    shift = int(round(T / wave_grid.dx))
    w2_T = np.roll(w2_0, a_sign * shift)
    w1_T = np.roll(w1_0, -a_sign * shift)
    if a_sign > 0:
        w2_T[:shift], w1_T[-shift:] = 0.0, 0.0
    else:
        w2_T[-shift:], w1_T[:shift] = 0.0, 0.0
    assert rel_l1(np.sqrt(2) * w2_T, u[0] + u[1]) <= 0.05
    assert rel_l1(np.sqrt(2) * w1_T, u[0] - u[1]) <= 0.05
    assert rel_l1(wave_exact(x, T, mu, a_sign), u) <= 0.05


def test_wave_default_sign_is_inward():
    assert WAVE_A_SIGN == -1.0
    x = np.linspace(-0.3, 3.0, 2001)
    u = wave_exact(x, 0.8, 1.0)
    # both bumps stay inside the domain, so the L1 mass is preserved
    assert np.sum(np.abs(u)) == pytest.approx(np.sum(np.abs(wave_exact(x, 0.0, 1.0))), rel=1e-2)


def test_wave_rejects_bad_sign(wave_grid):
    with pytest.raises(ValueError):
        solve_wave_1d(wave_grid, 1.0, [0.1], a_sign=0.5)


def test_wave_mass_balance(wave_grid):
    traj = solve_wave_1d(wave_grid, 1.7, [0.8])
    assert traj.diagnostics["mass_balance_error"] <= 1e-10


@pytest.fixture(scope="module")
def burgers_grid():
    return get_test_case("burgers2d").make_grid(100)


def test_burgers_zero_initial(burgers_grid):
    traj = solve_burgers_2d(burgers_grid, [0.5, 1.0], initial=np.zeros(burgers_grid.n_cells))
    assert np.all(traj.values == 0.0)


def test_burgers_mass_balance_and_max_norm(burgers_grid):
    times = np.linspace(0.0, 2.0, 21)
    traj = solve_burgers_2d(burgers_grid, times)
    assert traj.diagnostics["mass_balance_error"] <= 1e-10
    assert np.max(np.abs(traj.values)) <= np.max(np.abs(traj.values[0])) + 1e-12


def test_burgers_corner_shock_speed(burgers_grid):
    g = burgers_grid
    t = 0.2
    u = solve_burgers_2d(g, [t]).values[0, 0].reshape(g.shape)
    diag = np.diag(u)
    xc = g.axis_centers[0]
    # steepest descent along the diagonal beyond the square's centre
    k0 = np.searchsorted(xc, 0.3)
    jumps = -np.diff(diag[k0:])
    k = k0 + int(np.argmax(jumps))
    front = 0.5 * (xc[k] + xc[k + 1])
    # normal speed 1/sqrt(2) along the diagonal: the corner moves by t/2 per axis
    assert abs(front - (0.5 + t / 2)) <= 2 * g.h[0]


def test_burgers_initial_condition_indicator():
    pts = np.array([[0.25, 0.25], [0.6, 0.2], [0.0, 0.5], [-0.05, 0.1]])
    np.testing.assert_array_equal(burgers_initial(pts), [1.0, 0.0, 1.0, 0.0])


def test_heat_symmetric_at_zero():
    g = make_grid_2d((0, 1), (0, 1), 40, 40)
    u = solve_heat_2d(g, 0.0).reshape(40, 40)
    np.testing.assert_allclose(u, u.T, atol=1e-10)


def test_heat_nonnegative():
    g = make_grid_2d((0, 1), (0, 1), 30, 30)
    assert np.all(solve_heat_2d(g, 0.037) >= 0.0)


def _coarsen(u, n, factor):
    return u.reshape(n, factor, n, factor).mean(axis=(1, 3)).ravel()


def test_heat_constant_coefficient_self_convergence():
    one = lambda p: np.ones(len(p))
    fine = 128
    ref = solve_heat_2d(make_grid_2d((0, 1), (0, 1), fine, fine), 0.0, beta=one)
    errs = {}
    for n in (16, 32):
        u = solve_heat_2d(make_grid_2d((0, 1), (0, 1), n, n), 0.0, beta=one)
        errs[n] = rel_l1(_coarsen(ref, n, fine // n), u)
    assert errs[32] <= 0.01
    assert errs[16] / errs[32] >= 1.7


def test_sample_snapshots_wave_tensor_layout():
    test = get_test_case("wave1d")
    z = tensor_samples(test, (40, 20))
    assert z.shape == (800, 2)
    S, secs = sample_snapshots(test, z[:40], make_grid_1d(-0.3, 3.0, 200))
    assert S.shape == (40, 2, 200)
    assert secs.shape == (40,)


def test_sample_snapshots_initial_condition_exact():
    test = get_test_case("wave1d")
    g = make_grid_1d(-0.3, 3.0, 300)
    S, _ = sample_snapshots(test, [[0.0, 1.4]], g)
    np.testing.assert_array_equal(S[0], wave_initial(g.centers[:, 0], 1.4))


def test_sample_snapshots_burgers_single_trajectory():
    test = get_test_case("burgers2d")
    g = test.make_grid(40)
    z = tensor_samples(test, (100,))
    S, _ = sample_snapshots(test, z, g)
    assert S.shape == (100, 1, g.n_cells)
    direct = solve_burgers_2d(g, z[:, 0]).values
    np.testing.assert_array_equal(S, direct)


def test_sample_snapshots_outside_box():
    with pytest.raises(ValueError):
        sample_snapshots(get_test_case("heat2d"), [[0.2]], make_grid_2d((0, 1), (0, 1), 8, 8))
