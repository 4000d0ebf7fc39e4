"""Inverse of the spatial transform and its reduced model.

For a registered displacement ``Psi`` the forward map is ``phi = Id + Psi``.
Its inverse is sampled pointwise by solving ``min_y |phi(y) - x|^2`` with
Levenberg-Marquardt at the per-cell Gauss points, projected onto continuous
P1 functions on the structured triangulation, and finally reduced with POD
and one GP per coefficient and spatial component.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import gpr as gp
from .grid import Grid, QuadratureRule, Triangulation, gauss_legendre
from .pod import PodBasis, compute_pod, project_onto_basis, reconstruct
from .registration import DisplacementCoeffs, displacement_jacobian, eval_displacement

__all__ = [
    "InversionWarning",
    "invert_pointwise",
    "P1Projector",
    "InverseSnapshot",
    "build_inverse_snapshot",
    "InverseModel",
    "fit_inverse_model",
    "predict_inverse",
    "forward_jacobian_min",
    "inverse_jacobian_min",
    "round_trip_error",
]

log = logging.getLogger(__name__)


class InversionWarning(UserWarning):
    """Pointwise inversion stopped with a residual above the warning level."""


def _phi(c: DisplacementCoeffs, y):
    return y + eval_displacement(c, y, check=False)


def invert_pointwise(c: DisplacementCoeffs, x, y0=None, tol: float = 1e-10,
                     maxiter: int = 50, warn_level: float = 1e-6):
    """Solve ``phi(y) = x`` in the least-squares sense for every row of ``x``.

    Iterates are clamped to the closed domain.  Returns ``(y, residual)``
    with the Euclidean residual ``|phi(y) - x|`` per point.  Points whose
    residual stays above ``warn_level`` trigger an :class:`InversionWarning`
    but are still returned.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    lo, hi = c.lo, c.lo + c.length
    y = np.clip(x.copy() if y0 is None else np.atleast_2d(np.asarray(y0, dtype=float)).copy(), lo, hi)
    d = x.shape[1]
    eye = np.eye(d)
    r = _phi(c, y) - x
    res = np.linalg.norm(r, axis=1)
    lam = np.full(len(x), 1e-3)
    active = np.flatnonzero(res > tol)
    for _ in range(maxiter):
        if active.size == 0:
            break
        ya, ra = y[active], r[active]
        J = eye + displacement_jacobian(c, ya)
        JT = np.swapaxes(J, 1, 2)
        A = JT @ J + lam[active, None, None] * eye
        step = -np.linalg.solve(A, (JT @ ra[..., None]))[..., 0]
        yn = np.clip(ya + step, lo, hi)
        rn = _phi(c, yn) - x[active]
        resn = np.linalg.norm(rn, axis=1)
        ok = resn < res[active]
        acc = active[ok]
        y[acc], r[acc], res[acc] = yn[ok], rn[ok], resn[ok]
        lam[acc] = np.maximum(lam[acc] / 3.0, 1e-12)
        lam[active[~ok]] *= 4.0
        stalled = (~ok) & (lam[active] > 1e8)
        active = active[(res[active] > tol) & ~stalled]
    bad = res > warn_level
    if np.any(bad):
        warnings.warn(
            f"{int(bad.sum())} point(s) not inverted below {warn_level:g}; worst residual {res.max():.3e}",
            InversionWarning,
            stacklevel=2,
        )
    return y, res


class P1Projector:
    """Constrained L2 projection of quadrature-point data onto P1.

    The mass matrix is assembled consistently with the same per-cell Gauss
    rule that samples the data, ``M = P^T W P``; boundary vertices are held
    at zero.
    """

    def __init__(self, tri: Triangulation, rule: QuadratureRule | None = None):
        grid = tri.grid
        self.tri = tri
        self.rule = rule or gauss_legendre(3, grid.dim)
        self.points = grid.quadrature_points(self.rule)
        self.weights = np.tile(self.rule.weights, grid.n_cells) * grid.cell_volume
        self.P = tri.interpolation_matrix(self.points)
        PW = (self.P.T @ sp.diags(self.weights)).tocsr()
        self.interior = np.flatnonzero(~tri.boundary)
        mass = (PW @ self.P).tocsc()[self.interior][:, self.interior]
        self._PW = PW[self.interior]
        self._lu = spla.splu(mass.tocsc())

    def project(self, values) -> np.ndarray:
        """Nodal values ``(nv,)`` or ``(nv, k)`` from point values."""
        values = np.asarray(values, dtype=float)
        rhs = self._PW @ values
        sol = self._lu.solve(rhs)
        out = np.zeros((self.tri.n_vertices,) + values.shape[1:])
        out[self.interior] = sol
        return out

    def evaluate(self, nodal) -> np.ndarray:
        """P1 field at the projector's quadrature points."""
        return self.P @ nodal


@dataclass
class InverseSnapshot:
    """Nodal values of ``phi^{-1} - Id``, shape ``(d, n_vertices)``."""

    nodal: np.ndarray
    worst_residual: float


def build_inverse_snapshot(c: DisplacementCoeffs, projector: P1Projector) -> InverseSnapshot:
    """Sample ``phi^{-1}`` at the Gauss points and project its displacement."""
    x = projector.points
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InversionWarning)
        y, res = invert_pointwise(c, x)
        if np.any(res > 1e-8):
            # fall back to a first-order guess where the plain start failed
            bad = np.flatnonzero(res > 1e-8)
            y0 = x[bad] - eval_displacement(c, x[bad], check=False)
            y2, r2 = invert_pointwise(c, x[bad], y0=y0)
            better = r2 < res[bad]
            y[bad[better]], res[bad[better]] = y2[better], r2[better]
    for w in caught:
        if not issubclass(w.category, InversionWarning):
            warnings.warn(w.message, w.category)
    worst = float(res.max()) if res.size else 0.0
    if worst > 1e-6:
        warnings.warn(f"inverse map residual {worst:.3e} after fallback", InversionWarning, stacklevel=2)
    nodal = projector.project(y - x)
    return InverseSnapshot(nodal.T.copy(), worst)


@dataclass
class InverseModel:
    """POD bases and GPRs of the inverse displacement, one per component."""

    bases: list[PodBasis]
    gprs: list[list[gp.GprModel]]
    n_psi: int
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.bases)


def fit_inverse_model(snapshots, samples, n_psi: int, restarts: int = 5, seed: int = 0,
                      progress=None) -> InverseModel:
    """POD plus coefficient-wise GPR for each spatial component.

    ``snapshots`` has shape ``(m, d, n_vertices)``; both components share
    the truncation ``n_psi``.
    """
    snapshots = np.asarray(snapshots, dtype=float)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    m, d, nv = snapshots.shape
    if not 1 <= n_psi <= min(nv, m):
        raise ValueError(f"n_psi must lie in [1, {min(nv, m)}]")
    bases, gprs = [], []
    for k in range(d):
        S = snapshots[:, k, :].T
        basis = compute_pod(S, n_psi)
        alpha = project_onto_basis(S, basis)  # (n_psi, m)
        models = []
        for i in range(n_psi):
            models.append(gp.train(samples, alpha[i], restarts=restarts, seed=seed + i))
            if progress is not None:
                progress(f"inverse GPR component {k} coefficient {i + 1}/{n_psi}")
        bases.append(basis)
        gprs.append(models)
    return InverseModel(bases, gprs, n_psi)


def predict_inverse(model: InverseModel, z, n_psi: int | None = None) -> np.ndarray:
    """Nodal inverse displacement ``(d, n_vertices)`` at a single parameter."""
    n_psi = model.n_psi if n_psi is None else n_psi
    if not 0 <= n_psi <= model.n_psi:
        raise ValueError(f"n_psi must lie in [0, {model.n_psi}]")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    out = []
    for basis, models in zip(model.bases, model.gprs):
        alpha = np.array([gp.predict(mdl, z)[0] for mdl in models[:n_psi]])
        out.append(reconstruct(alpha, basis) if n_psi else np.zeros(basis.N))
    return np.array(out)


def forward_jacobian_min(c: DisplacementCoeffs, grid: Grid) -> float:
    """``min det(I + grad Psi)`` over the cell centers of ``grid``."""
    J = np.eye(grid.dim) + displacement_jacobian(c, grid.centers)
    return float(np.min(np.linalg.det(J)))


def inverse_jacobian_min(nodal, tri: Triangulation) -> float:
    """``min det(I + grad Psi~)`` over the simplices for a P1 displacement."""
    nodal = np.asarray(nodal, dtype=float)  # (d, nv)
    G = tri.gradients(nodal.T)  # (ns, d_x, d_comp)
    J = np.eye(tri.grid.dim) + np.swapaxes(G, 1, 2)
    return float(np.min(np.linalg.det(J)))


def round_trip_error(c: DisplacementCoeffs, nodal, projector: P1Projector) -> float:
    """Mean ``|phi(x + Psi~(x)) - x|`` over the projector's Gauss points."""
    x = projector.points
    y = projector.tri.grid.clamp(x + projector.evaluate(np.asarray(nodal).T))
    return float(np.mean(np.linalg.norm(_phi(c, y) - x, axis=1)))
