"""High-fidelity solvers and the three benchmark problems.

``wave1d``
    Linear 2x2 hyperbolic system on (-0.3, 3), parameters z = (t, mu).
``burgers2d``
    Scalar 2D Burgers with a unit square pulse on (-0.1, 1.5)^2, z = (t,).
``heat2d``
    Diffusion with a moving high-conductivity block on (0, 1)^2, z = (z,).

The hyperbolic problems use a MUSCL finite-volume scheme (van Leer limiter,
local Lax-Friedrichs flux, SSP-RK2, CFL 0.5) with zero ghost states.  The
elliptic problem uses continuous P1 finite elements on the two-triangle split
of the structured grid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, Grid1D, Grid2D, Triangulation, make_grid_1d, make_grid_2d

__all__ = [
    "TestCase",
    "Trajectory",
    "TEST_CASES",
    "get_test_case",
    "wave_initial",
    "wave_exact",
    "burgers_initial",
    "heat_conductivity",
    "solve_wave_1d",
    "solve_burgers_2d",
    "solve_heat_2d",
    "sample_snapshots",
    "tensor_samples",
    "uniform_samples",
]

CFL = 0.5
SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class TestCase:
    name: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    param_names: tuple[str, ...]
    param_lower: tuple[float, ...]
    param_upper: tuple[float, ...]
    shape: tuple[int, ...]  # full-scale cell counts
    n_components: int = 1
    time_index: int | None = None

    __test__ = False  # not a pytest class

    @property
    def p(self) -> int:
        return len(self.param_names)

    @property
    def z_ref(self) -> np.ndarray:
        """Centre of the parameter box."""
        return 0.5 * (np.asarray(self.param_lower) + np.asarray(self.param_upper))

    @property
    def T(self) -> float | None:
        if self.time_index is None:
            return None
        return self.param_upper[self.time_index]

    def make_grid(self, shape=None) -> Grid:
        shape = tuple(self.shape if shape is None else np.atleast_1d(shape).tolist())
        if len(self.lower) == 1:
            return make_grid_1d(self.lower[0], self.upper[0], shape[0])
        if len(shape) == 1:
            shape = (shape[0], shape[0])
        return make_grid_2d(
            (self.lower[0], self.upper[0]), (self.lower[1], self.upper[1]), *shape
        )

    def check_samples(self, samples, tol: float = 1e-12) -> np.ndarray:
        z = np.atleast_2d(np.asarray(samples, dtype=float))
        if z.shape[1] != self.p:
            raise ValueError(f"{self.name}: expected {self.p} parameter components, got {z.shape[1]}")
        lo = np.asarray(self.param_lower)
        hi = np.asarray(self.param_upper)
        span = hi - lo
        bad = np.any((z < lo - tol * span) | (z > hi + tol * span), axis=1)
        if np.any(bad):
            raise ValueError(f"{self.name}: sample {z[bad][0].tolist()} lies outside the parameter box")
        return np.clip(z, lo, hi)


TEST_CASES = {
    "wave1d": TestCase(
        "wave1d", (-0.3,), (3.0,), ("t", "mu"), (0.0, 0.5), (0.8, 2.0), (1000,),
        n_components=2, time_index=0,
    ),
    "burgers2d": TestCase(
        "burgers2d", (-0.1, -0.1), (1.5, 1.5), ("t",), (0.0,), (2.0,), (300, 300),
        time_index=0,
    ),
    "heat2d": TestCase(
        "heat2d", (0.0, 0.0), (1.0, 1.0), ("z",), (-0.05,), (0.05,), (300, 300),
    ),
}


def get_test_case(name: str) -> TestCase:
    try:
        return TEST_CASES[name]
    except KeyError:
        raise ValueError(f"unknown test case {name!r}; choose from {sorted(TEST_CASES)}") from None


def tensor_samples(test: TestCase, counts) -> np.ndarray:
    """Uniform tensor layout including the corners of the parameter box."""
    counts = list(np.atleast_1d(counts))
    if len(counts) != test.p:
        raise ValueError(f"{test.name} needs {test.p} sample counts")
    axes = [np.linspace(a, b, int(n)) for a, b, n in zip(test.param_lower, test.param_upper, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def uniform_samples(test: TestCase, m: int, rng: np.random.Generator) -> np.ndarray:
    lo = np.asarray(test.param_lower)
    hi = np.asarray(test.param_upper)
    return lo + (hi - lo) * rng.random((m, test.p))


@dataclass
class Trajectory:
    times: np.ndarray  # (k,)
    values: np.ndarray  # (k, n_components, N)
    wall: np.ndarray  # cumulative solver wall-clock at each requested time
    diagnostics: dict = field(default_factory=dict)


# -- wave equation ----------------------------------------------------------

WAVE_DELTA1 = 0.3
WAVE_DELTA2 = 2.8
# Sign of the coupling matrix A = s * [[0, 1], [1, 0]].  With s = -1 the two
# bumps travel towards each other and stay inside the domain up to T = 0.8,
# which reproduces the reported snapshot statistics (E^proj_1(S_U) ~ 0.70);
# s = +1 sends both bumps out through the boundary.  See notes/decisions.md.
WAVE_A_SIGN = -1.0


def _bumps(x, mu):
    w1 = mu * (np.sin(2 * np.pi * (x + 0.2)) + 1.0) * ((x >= WAVE_DELTA1 - 0.5) & (x <= WAVE_DELTA1))
    w2 = mu * (np.sin(2 * np.pi * (x - 2.3)) + 1.0) * ((x >= WAVE_DELTA2 - 0.5) & (x <= WAVE_DELTA2))
    return w1, w2


def wave_initial(x: np.ndarray, mu: float) -> np.ndarray:
    """Initial state (u1, u2), shape ``(2, len(x))``."""
    w1, w2 = _bumps(np.asarray(x, dtype=float), mu)
    return np.stack([(w1 + w2) / SQRT2, (-w1 + w2) / SQRT2])


def wave_exact(x: np.ndarray, t: float, mu: float, a_sign: float = WAVE_A_SIGN) -> np.ndarray:
    """Characteristic solution with unit speed.

    For ``a_sign = +1`` the bump w2 travels right and w1 travels left; the
    directions are swapped for ``a_sign = -1``.
    """
    x = np.asarray(x, dtype=float)
    w1, _ = _bumps(x + a_sign * t, mu)
    _, w2 = _bumps(x - a_sign * t, mu)
    return np.stack([(w1 + w2) / SQRT2, (-w1 + w2) / SQRT2])


def _van_leer(a, b):
    num = a * np.abs(b) + np.abs(a) * b
    den = np.abs(a) + np.abs(b)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _faces(u, axis):
    """Limited left/right states at all interior and boundary faces along ``axis``.

    ``u`` carries two zero ghost layers on both sides of ``axis``.  Returns
    arrays with ``n + 1`` faces along that axis.
    """
    du = np.diff(u, axis=axis)
    n = u.shape[axis]
    sl = _van_leer(_take(du, 0, n - 2, axis), _take(du, 1, n - 1, axis))  # cells 1..n-2
    uc = _take(u, 1, n - 1, axis)
    left = _take(uc + 0.5 * sl, 0, n - 3, axis)  # cells 1..n-3 -> faces between k, k+1
    right = _take(uc - 0.5 * sl, 1, n - 2, axis)
    return left, right


def _take(a, start, stop, axis):
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return a[tuple(idx)]


def _wave_rhs(u, dx, a_sign=WAVE_A_SIGN):
    # u: (2, N); flux A u = s (u2, u1); LLF with alpha = 1 is the upwind flux
    up = np.pad(u, ((0, 0), (2, 2)))
    uL, uR = _faces(up, axis=1)
    fL = a_sign * uL[::-1]
    fR = a_sign * uR[::-1]
    F = 0.5 * (fL + fR) - 0.5 * (uR - uL)
    return -(F[:, 1:] - F[:, :-1]) / dx, F


def _burgers_rhs(u, h):
    up = np.pad(u, 2)
    out = np.zeros_like(u)
    boundary = 0.0
    for axis, dh, face_len in ((0, h[0], h[1]), (1, h[1], h[0])):
        core = _take(up, 2, up.shape[1 - axis] - 2, 1 - axis)
        uL, uR = _faces(core, axis)
        a = np.maximum(np.abs(uL), np.abs(uR))
        F = 0.25 * (uL**2 + uR**2) - 0.5 * a * (uR - uL)
        out -= np.diff(F, axis=axis) / dh
        boundary += face_len * (
            np.sum(_take(F, F.shape[axis] - 1, None, axis)) - np.sum(_take(F, 0, 1, axis))
        )
    return out, boundary


def _march(u0, rhs, dt_of, times, mass_of=None):
    """SSP-RK2 to ``max(times)``; linear interpolation onto requested times."""
    times = np.asarray(times, dtype=float)
    order = np.argsort(times)
    out = np.empty((len(times),) + u0.shape)
    wall = np.empty(len(times))
    t0 = time.perf_counter()
    t = 0.0
    u = u0.copy()
    k = 0
    outflow = 0.0
    mass_err = 0.0
    mass0 = None if mass_of is None else mass_of(u)
    t_end = float(times.max()) if len(times) else 0.0
    while k < len(order) and times[order[k]] <= t:
        out[order[k]] = u
        wall[order[k]] = time.perf_counter() - t0
        k += 1
    nsteps = 0
    while k < len(order):
        dt = dt_of(u)
        if not np.isfinite(dt) or dt <= 0:
            raise RuntimeError("degenerate time step from CFL condition")
        dt = min(dt, t_end - t)
        L1, b1 = rhs(u)
        u1 = u + dt * L1
        L2, b2 = rhs(u1)
        un = 0.5 * u + 0.5 * (u1 + dt * L2)
        outflow += 0.5 * dt * (b1 + b2)
        tn = t + dt
        nsteps += 1
        while k < len(order) and times[order[k]] <= tn + 1e-14:
            s = (times[order[k]] - t) / dt
            out[order[k]] = (1 - s) * u + s * un
            wall[order[k]] = time.perf_counter() - t0
            k += 1
        u, t = un, tn
        if mass_of is not None:
            scale = max(float(np.sum(np.abs(mass0))), 1e-300)
            mass_err = max(mass_err, float(np.max(np.abs(mass_of(u) + outflow - mass0))) / scale)
    diag = {"steps": nsteps, "outflow": outflow}
    if mass_of is not None:
        diag["mass_balance_error"] = mass_err
    return out, wall, diag


def solve_wave_1d(grid: Grid1D, mu: float, times, initial: np.ndarray | None = None,
                  a_sign: float = WAVE_A_SIGN) -> Trajectory:
    """Second-order FV solution of the 1D wave system at the requested times.

    ``a_sign`` selects the sign of the coupling matrix (see ``WAVE_A_SIGN``).
    """
    if grid.dim != 1:
        raise ValueError("solve_wave_1d needs a 1D grid")
    if a_sign not in (1.0, -1.0):
        raise ValueError("a_sign must be +1 or -1")
    x = grid.centers[:, 0]
    u0 = wave_initial(x, mu) if initial is None else np.array(initial, dtype=float)
    dx = grid.dx
    dt = CFL * dx  # both characteristic speeds have unit magnitude

    def rhs(u):
        L, F = _wave_rhs(u, dx, a_sign)
        return L, F[:, -1] - F[:, 0]

    vals, wall, diag = _march(
        u0, rhs, lambda u: dt, times, mass_of=lambda u: u.sum(axis=1) * dx
    )
    return Trajectory(np.asarray(times, dtype=float), vals, wall, diag)


def burgers_initial(points: np.ndarray) -> np.ndarray:
    return np.all((points >= 0.0) & (points <= 0.5), axis=1).astype(float)


def solve_burgers_2d(grid: Grid2D, times, initial: np.ndarray | None = None) -> Trajectory:
    """Second-order FV solution of 2D Burgers, flux (u^2/2, u^2/2)."""
    if grid.dim != 2:
        raise ValueError("solve_burgers_2d needs a 2D grid")
    if initial is None:
        # cell averages of the indicator (exact for axis-aligned squares)
        u0 = _square_average(grid, 0.0, 0.5)
    else:
        u0 = np.asarray(initial, dtype=float).reshape(grid.shape)
    u0 = u0.reshape(grid.shape)
    h = grid.h
    area = grid.cell_volume

    def dt_of(u):
        a = np.max(np.abs(u))
        if a == 0:
            return CFL * float(np.min(h))
        return CFL / (a / h[0] + a / h[1])

    vals, wall, diag = _march(
        u0, lambda u: _burgers_rhs(u, h), dt_of, times, mass_of=lambda u: u.sum() * area
    )
    k = len(np.atleast_1d(times))
    return Trajectory(np.asarray(times, dtype=float), vals.reshape(k, 1, -1), wall, diag)


def _square_average(grid: Grid2D, a: float, b: float) -> np.ndarray:
    """Exact cell averages of the indicator of ``[a, b]^2``."""
    frac = []
    for ax in range(2):
        lo = grid.axis_centers[ax] - 0.5 * grid.h[ax]
        hi = lo + grid.h[ax]
        overlap = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
        frac.append(overlap / grid.h[ax])
    return np.outer(frac[0], frac[1])


# -- heat conduction -------------------------------------------------------


def heat_conductivity(points: np.ndarray, z: float) -> np.ndarray:
    centre = 0.5 + z
    inside = np.max(np.abs(points - centre), axis=1) <= 0.25
    return 0.1 + 0.9 * inside


def solve_heat_2d(grid: Grid2D, z: float, beta=None) -> np.ndarray:
    """P1 Galerkin solution of -div(beta grad u) = 1, u = 0 on the boundary.

    Returns cell values: the mean of the two triangle centroid values.
    ``beta`` optionally overrides the conductivity (callable of points).
    """
    tri = Triangulation.from_grid(grid)
    v = tri.vertices[tri.simplices]  # (ns, 3, 2)
    centroids = v.mean(axis=1)
    b = heat_conductivity(centroids, z) if beta is None else np.asarray(beta(centroids), dtype=float)
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    # gradients of barycentric coordinates
    g = np.empty((len(area), 3, 2))
    g[:, 1] = np.column_stack([e2[:, 1], -e2[:, 0]]) / (2 * area[:, None])
    g[:, 2] = np.column_stack([-e1[:, 1], e1[:, 0]]) / (2 * area[:, None])
    g[:, 0] = -g[:, 1] - g[:, 2]
    Ke = (b * area)[:, None, None] * np.einsum("eid,ejd->eij", g, g)
    rows = np.repeat(tri.simplices, 3, axis=1).ravel()
    cols = np.tile(tri.simplices, (1, 3)).ravel()
    nv = tri.n_vertices
    K = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(nv, nv))
    f = np.bincount(tri.simplices.ravel(), weights=np.repeat(area / 3.0, 3), minlength=nv)
    free = ~tri.boundary
    u = np.zeros(nv)
    Kff = K[free][:, free].tocsc()
    try:
        u[free] = spla.spsolve(Kff, f[free])
    except RuntimeError as exc:  # pragma: no cover - singular only for beta <= 0
        raise RuntimeError("singular stiffness matrix in heat solver") from exc
    if not np.all(np.isfinite(u)):
        raise RuntimeError("singular stiffness matrix in heat solver")
    tri_mid = u[tri.simplices].mean(axis=1)
    return tri_mid.reshape(-1, 2).mean(axis=1)


# -- snapshot generation ---------------------------------------------------


def sample_snapshots(test: TestCase, samples, grid: Grid | None = None):
    """HF snapshots at ``samples``.

    Returns ``(snapshots, hf_seconds)`` with ``snapshots`` of shape
    ``(m, n_components, N)``.  For time-dependent problems one trajectory is
    computed per distinct non-time parameter; the cost attributed to a sample
    is the solver wall-clock needed to reach its time.
    """
    z = test.check_samples(samples)
    grid = test.make_grid() if grid is None else grid
    m = len(z)
    out = np.empty((m, test.n_components, grid.n_cells))
    secs = np.empty(m)
    if test.name == "heat2d":
        for i, zi in enumerate(z):
            t0 = time.perf_counter()
            out[i, 0] = solve_heat_2d(grid, float(zi[0]))
            secs[i] = time.perf_counter() - t0
        return out, secs
    ti = test.time_index
    rest = np.delete(z, ti, axis=1)
    if rest.shape[1] == 0:
        keys, inverse = np.zeros((1, 0)), np.zeros(m, dtype=int)
    else:
        keys, inverse = np.unique(rest, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).ravel()
    for k, key in enumerate(keys):
        idx = np.flatnonzero(inverse == k)
        times = z[idx, ti]
        if test.name == "wave1d":
            traj = solve_wave_1d(grid, float(key[0]), times)
        else:
            traj = solve_burgers_2d(grid, times)
        out[idx] = traj.values
        secs[idx] = traj.wall
    return out, secs
