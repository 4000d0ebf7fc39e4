"""Structured grids, P1 meshes and tensor Gauss-Legendre rules.

Every field in the package lives on a uniform, cell-centred tensor grid in one
or two space dimensions.  Cell values are flattened in C order of the array of
shape ``grid.shape``; in 2D entry ``i * ny + j`` belongs to cell ``(x_i, y_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Grid",
    "Grid1D",
    "Grid2D",
    "QuadratureRule",
    "Triangulation",
    "make_grid_1d",
    "make_grid_2d",
    "gauss_legendre",
    "gauss_legendre_2d",
    "project_to_cells",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor rule on the reference cube ``[0, 1]^d``.

    Weights sum to one, so cell integrals are ``volume * sum(w * f)``.
    """

    points: np.ndarray  # (q, d)
    weights: np.ndarray  # (q,)
    degree: int  # per-axis polynomial exactness

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]


def gauss_legendre(order: int, dim: int = 1) -> QuadratureRule:
    """Tensor Gauss-Legendre rule with ``order`` points per axis."""
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    if dim not in (1, 2):
        raise ValueError(f"only 1D and 2D rules are supported, got dim={dim}")
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    if dim == 1:
        return QuadratureRule(x[:, None], w.copy(), 2 * order - 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(pts, W.ravel(), 2 * order - 1)


def gauss_legendre_2d(order: int) -> QuadratureRule:
    return gauss_legendre(order, dim=2)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cell-centred tensor grid on the box ``lower``..``upper``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.shape)):
            raise ValueError("lower, upper and shape must have equal length")
        for a, b, n in zip(self.lower, self.upper, self.shape):
            if not (np.isfinite(a) and np.isfinite(b)) or not b > a:
                raise ValueError(f"invalid bounds ({a}, {b}): need b > a")
            if int(n) != n or n < 1:
                raise ValueError(f"cell count must be a positive integer, got {n}")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @cached_property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @cached_property
    def length(self) -> np.ndarray:
        return self.hi - self.lo

    @cached_property
    def h(self) -> np.ndarray:
        return self.length / np.asarray(self.shape, dtype=float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @cached_property
    def axis_centers(self) -> tuple[np.ndarray, ...]:
        return tuple(
            lo + (np.arange(n) + 0.5) * h for lo, n, h in zip(self.lo, self.shape, self.h)
        )

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(n_cells, dim)``."""
        mesh = np.meshgrid(*self.axis_centers, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    @cached_property
    def cell_origins(self) -> np.ndarray:
        return self.centers - 0.5 * self.h

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        shape = tuple(int(n) for n in d["shape"])
        lower = tuple(float(v) for v in d["lower"])
        upper = tuple(float(v) for v in d["upper"])
        if len(shape) == 1:
            return Grid1D(lower, upper, shape)
        return Grid2D(lower, upper, shape)

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and self.shape == other.shape
            and np.allclose(self.lower, other.lower, rtol=0, atol=0)
            and np.allclose(self.upper, other.upper, rtol=0, atol=0)
        )

    def __hash__(self):
        return hash((self.lower, self.upper, self.shape))

    # -- point queries -----------------------------------------------------

    def clamp(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lo, self.hi)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lo - tol) & (points <= self.hi + tol), axis=1)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Flat index of the cell containing each point (clamped to the box)."""
        idx = np.floor((points - self.lo) / self.h).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return self._flat(idx)

    def _flat(self, idx: np.ndarray) -> np.ndarray:
        if self.dim == 1:
            return idx[:, 0]
        return idx[:, 0] * self.shape[1] + idx[:, 1]

    def evaluate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the piecewise-constant field ``values`` at ``points``.

        ``values`` may carry trailing columns (one field per column).
        """
        return values[self.locate(points)]

    def limited_slopes(self, values: np.ndarray) -> np.ndarray:
        """Van Leer limited cell slopes, shape ``(N, d) + values.shape[1:]``.

        Ghost cells outside the box hold the zero state, matching the
        homogeneous Dirichlet data of all benchmark problems.
        """
        values = np.asarray(values, dtype=float)
        trail = values.shape[1:]
        u = values.reshape(self.shape + trail)
        out = np.empty((self.n_cells, self.dim) + trail)
        for ax in range(self.dim):
            pad = [(0, 0)] * u.ndim
            pad[ax] = (1, 1)
            up = np.pad(u, pad)
            du = np.diff(up, axis=ax)
            n = du.shape[ax]
            a = np.take(du, np.arange(0, n - 1), axis=ax)
            b = np.take(du, np.arange(1, n), axis=ax)
            den = np.abs(a) + np.abs(b)
            s = np.where(den > 0, (a * np.abs(b) + np.abs(a) * b) / np.where(den > 0, den, 1.0), 0.0)
            out[:, ax] = s.reshape((self.n_cells,) + trail) / self.h[ax]
        return out

    def evaluate_linear(self, values: np.ndarray, points: np.ndarray, slopes=None) -> np.ndarray:
        """Evaluate the limited piecewise-linear reconstruction of ``values``.

        Inside cell ``i`` the field is ``u_i + s_i . (x - x_i)``.  Averaged
        with any centrally symmetric rule it returns ``u_i`` exactly, so an
        identity warp leaves cell values unchanged.
        """
        values = np.asarray(values, dtype=float)
        if slopes is None:
            slopes = self.limited_slopes(values)
        idx = self.locate(points)
        off = points - self.centers[idx]
        trail = (None,) * (values.ndim - 1)
        return values[idx] + np.sum(slopes[idx] * off[(slice(None), slice(None)) + trail], axis=1)

    def interpolate(self, values: np.ndarray, points: np.ndarray, grad: bool = False):
        """Multilinear interpolation of cell values between cell centres.

        Coordinates outside the hull of the centres are clamped, so the
        interpolant is constant (and its gradient zero) in the half cell
        along the boundary.
        """
        s = (points - self.lo) / self.h - 0.5
        nmax = np.asarray(self.shape) - 1
        s_cl = np.clip(s, 0.0, nmax)
        inside = (s >= 0.0) & (s <= nmax)
        i0 = np.minimum(np.floor(s_cl).astype(np.int64), np.maximum(nmax - 1, 0))
        t = s_cl - i0
        i1 = np.minimum(i0 + 1, nmax)
        if self.dim == 1:
            v0 = values[i0[:, 0]]
            v1 = values[i1[:, 0]]
            t0 = t[:, 0]
            val = v0 + t0 * (v1 - v0)
            if not grad:
                return val
            dv = np.where(inside[:, 0], (v1 - v0) / self.h[0], 0.0)
            return val, dv[:, None]
        ny = self.shape[1]
        a, b = i0[:, 0], i0[:, 1]
        a1, b1 = i1[:, 0], i1[:, 1]
        v00 = values[a * ny + b]
        v10 = values[a1 * ny + b]
        v01 = values[a * ny + b1]
        v11 = values[a1 * ny + b1]
        tx, ty = t[:, 0], t[:, 1]
        val = (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 + (1 - tx) * ty * v01 + tx * ty * v11
        if not grad:
            return val
        dx = ((1 - ty) * (v10 - v00) + ty * (v11 - v01)) / self.h[0]
        dy = ((1 - tx) * (v01 - v00) + tx * (v11 - v10)) / self.h[1]
        dx = np.where(inside[:, 0], dx, 0.0)
        dy = np.where(inside[:, 1], dy, 0.0)
        return val, np.column_stack([dx, dy])

    # -- quadrature --------------------------------------------------------

    def quadrature_points(self, rule: QuadratureRule) -> np.ndarray:
        """Physical quadrature points, shape ``(n_cells * q, dim)``, cell-major."""
        if rule.dim != self.dim:
            raise ValueError("quadrature rule dimension does not match the grid")
        pts = self.cell_origins[:, None, :] + rule.points[None, :, :] * self.h
        return pts.reshape(-1, self.dim)

    def cell_average(self, point_values: np.ndarray, rule: QuadratureRule) -> np.ndarray:
        """Reduce values at :meth:`quadrature_points` to per-cell averages."""
        q = rule.size
        shaped = point_values.reshape((self.n_cells, q) + point_values.shape[1:])
        return np.tensordot(rule.weights, shaped, axes=([0], [1]))


class Grid1D(Grid):
    """Uniform grid of ``n_cells`` intervals on ``(a, b)``."""

    @property
    def a(self) -> float:
        return self.lower[0]

    @property
    def b(self) -> float:
        return self.upper[0]

    @property
    def dx(self) -> float:
        return float(self.h[0])


class Grid2D(Grid):
    """Tensor product of two uniform axes."""

    @property
    def nx(self) -> int:
        return self.shape[0]

    @property
    def ny(self) -> int:
        return self.shape[1]

    @property
    def cell_areas(self) -> np.ndarray:
        return np.full(self.n_cells, self.cell_volume)


def make_grid_1d(a: float, b: float, n_cells: int) -> Grid1D:
    return Grid1D((float(a),), (float(b),), (int(n_cells),))


def make_grid_2d(x_bounds, y_bounds, nx: int, ny: int | None = None) -> Grid2D:
    ny = nx if ny is None else ny
    return Grid2D(
        (float(x_bounds[0]), float(y_bounds[0])),
        (float(x_bounds[1]), float(y_bounds[1])),
        (int(nx), int(ny)),
    )


def project_to_cells(f, grid: Grid, rule: QuadratureRule) -> np.ndarray:
    """Cell averages of the point function ``f`` by per-cell quadrature.

    ``f`` receives an ``(npts, dim)`` array and returns ``(npts,)`` values.
    """
    pts = grid.quadrature_points(rule)
    vals = np.asarray(f(pts), dtype=float)
    return grid.cell_average(vals, rule)


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Simplicial mesh on the vertices of a structured grid.

    In 2D every cell is split along its ``(0,0)-(1,1)`` diagonal into a lower
    triangle ``(v00, v10, v11)`` and an upper triangle ``(v00, v11, v01)``; in
    1D the simplices are the cells themselves.
    """

    grid: Grid
    vertices: np.ndarray  # (nv, d)
    simplices: np.ndarray  # (ns, d + 1)

    @classmethod
    def from_grid(cls, grid: Grid) -> "Triangulation":
        if grid.dim == 1:
            (n,) = grid.shape
            v = np.linspace(grid.lo[0], grid.hi[0], n + 1)[:, None]
            s = np.column_stack([np.arange(n), np.arange(1, n + 1)])
            return cls(grid, v, s)
        nx, ny = grid.shape
        xs = np.linspace(grid.lo[0], grid.hi[0], nx + 1)
        ys = np.linspace(grid.lo[1], grid.hi[1], ny + 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        v = np.column_stack([X.ravel(), Y.ravel()])
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i, j = i.ravel(), j.ravel()
        v00 = i * (ny + 1) + j
        v10 = (i + 1) * (ny + 1) + j
        v01 = i * (ny + 1) + j + 1
        v11 = (i + 1) * (ny + 1) + j + 1
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v11, v01])
        # simplices 2k and 2k+1 belong to cell k
        s = np.stack([lower, upper], axis=1).reshape(-1, 3)
        return cls(grid, v, s)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_simplices(self) -> int:
        return self.simplices.shape[0]

    @cached_property
    def boundary(self) -> np.ndarray:
        """Boolean mask of vertices on the boundary of the box."""
        g = self.grid
        tol = 1e-12 * float(np.max(np.abs(g.length)))
        v = self.vertices
        return np.any((np.abs(v - g.lo) <= tol) | (np.abs(v - g.hi) <= tol), axis=1)

    def signed_volumes(self) -> np.ndarray:
        v = self.vertices[self.simplices]
        if self.grid.dim == 1:
            return v[:, 1, 0] - v[:, 0, 0]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def interpolation_matrix(self, points: np.ndarray) -> sp.csr_matrix:
        """Sparse map from nodal values to P1 values at ``points``."""
        g = self.grid
        pts = g.clamp(points)
        s = (pts - g.lo) / g.h
        idx = np.clip(np.floor(s).astype(np.int64), 0, np.asarray(g.shape) - 1)
        loc = s - idx
        npts = pts.shape[0]
        rows = np.repeat(np.arange(npts), g.dim + 1)
        if g.dim == 1:
            i = idx[:, 0]
            cols = np.column_stack([i, i + 1])
            w = np.column_stack([1 - loc[:, 0], loc[:, 0]])
        else:
            ny = g.shape[1]
            i, j = idx[:, 0], idx[:, 1]
            xi, eta = loc[:, 0], loc[:, 1]
            v00 = i * (ny + 1) + j
            v10 = (i + 1) * (ny + 1) + j
            v01 = i * (ny + 1) + j + 1
            v11 = (i + 1) * (ny + 1) + j + 1
            low = eta <= xi
            cols = np.where(
                low[:, None],
                np.column_stack([v00, v10, v11]),
                np.column_stack([v00, v01, v11]),
            )
            w = np.where(
                low[:, None],
                np.column_stack([1 - xi, xi - eta, eta]),
                np.column_stack([1 - eta, eta - xi, xi]),
            )
        return sp.csr_matrix(
            (w.ravel(), (rows, cols.ravel())), shape=(npts, self.n_vertices)
        )

    def gradients(self, nodal: np.ndarray) -> np.ndarray:
        """Constant gradient of a P1 field per simplex, shape ``(ns, d)``.

        ``nodal`` may be ``(nv,)`` or ``(nv, k)``; the result gains a trailing
        axis of length ``k`` in the latter case (shape ``(ns, d, k)``).
        """
        v = self.vertices[self.simplices]
        f = nodal[self.simplices]
        if self.grid.dim == 1:
            h = v[:, 1, 0] - v[:, 0, 0]
            return ((f[:, 1] - f[:, 0]).T / h).T[:, None]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        A = np.stack([e1, e2], axis=1)  # rows are edge vectors
        df = np.stack([f[:, 1] - f[:, 0], f[:, 2] - f[:, 0]], axis=1)
        if df.ndim == 2:
            return np.linalg.solve(A, df[..., None])[..., 0]
        return np.linalg.solve(A, df)
