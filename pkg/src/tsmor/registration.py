"""Optimization-based registration of snapshots.

The displacement ``Psi = phi - Id`` lives in the bubble space spanned by
tensor Legendre polynomials times ``prod_k s_k (1 - s_k)`` on the unit cube,
pulled back affinely to the physical box.  Per axis there are ``M`` Legendre
degrees ``0 .. M-1``, hence ``d * M**d`` coefficients.  The bubble factor makes
``Psi`` vanish on the boundary for every coefficient vector, so the problem
stays unconstrained.

Registration minimizes ``D(Psi)**power + eps * ||Lap Psi||^2`` where ``D`` is a
matching term (squared L2 snapshot mismatch or squared point-set mismatch).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from .grid import Grid, QuadratureRule, gauss_legendre

__all__ = [
    "DisplacementCoeffs",
    "RegistrationConfig",
    "RegistrationError",
    "RegistrationResult",
    "L2Snapshot",
    "PointSet",
    "legendre_derivatives",
    "displacement_basis",
    "eval_displacement",
    "displacement_jacobian",
    "forward_jacobian_min",
    "regularizer",
    "objective",
    "objective_and_grad",
    "register_one",
    "register_all",
    "transform_snapshot",
    "square_boundary_points",
]

log = logging.getLogger(__name__)


class RegistrationError(RuntimeError):
    pass


# -- polynomial basis ------------------------------------------------------


def legendre_derivatives(n: int, x: np.ndarray):
    """Legendre polynomials of degree ``0..n-1`` and two derivatives at ``x``.

    Returns three arrays of shape ``(len(x), n)``.
    """
    x = np.asarray(x, dtype=float)
    P = np.zeros((x.size, n))
    dP = np.zeros_like(P)
    d2P = np.zeros_like(P)
    if n == 0:
        return P, dP, d2P
    P[:, 0] = 1.0
    if n > 1:
        P[:, 1] = x
        dP[:, 1] = 1.0
    for k in range(1, n - 1):
        P[:, k + 1] = ((2 * k + 1) * x * P[:, k] - k * P[:, k - 1]) / (k + 1)
        dP[:, k + 1] = dP[:, k - 1] + (2 * k + 1) * P[:, k]
        d2P[:, k + 1] = d2P[:, k - 1] + (2 * k + 1) * dP[:, k]
    return P, dP, d2P


def _axis_factors(M: int, s: np.ndarray):
    """``q_i(s) = l_i(2s - 1) s (1 - s)`` and its first two derivatives."""
    P, dP, d2P = legendre_derivatives(M, 2.0 * s - 1.0)
    b = (s * (1.0 - s))[:, None]
    db = (1.0 - 2.0 * s)[:, None]
    q = P * b
    dq = 2.0 * dP * b + P * db
    d2q = 4.0 * d2P * b + 4.0 * dP * db - 2.0 * P
    return q, dq, d2q


def displacement_basis(M: int, xhat: np.ndarray, deriv: int = 0):
    """Scalar bubble basis on reference points ``xhat`` in ``[0, 1]^d``.

    ``deriv=0`` gives values ``(npts, M**d)``; ``deriv=1`` gradients
    ``(npts, d, M**d)``; ``deriv=2`` Laplacians ``(npts, M**d)``.  Multi-index
    ``(a, b)`` is flattened to ``a * M + b``.
    """
    xhat = np.atleast_2d(xhat)
    d = xhat.shape[1]
    factors = [_axis_factors(M, xhat[:, k]) for k in range(d)]
    if d == 1:
        q, dq, d2q = factors[0]
        if deriv == 0:
            return q
        if deriv == 1:
            return dq[:, None, :]
        return d2q
    (q1, dq1, d2q1), (q2, dq2, d2q2) = factors
    npts = xhat.shape[0]

    def outer(a, b):
        return (a[:, :, None] * b[:, None, :]).reshape(npts, M * M)

    if deriv == 0:
        return outer(q1, q2)
    if deriv == 1:
        return np.stack([outer(dq1, q2), outer(q1, dq2)], axis=1)
    return outer(d2q1, q2) + outer(q1, d2q2)


@lru_cache(maxsize=32)
def _laplacian_gram(M: int, d: int) -> np.ndarray:
    """Exact Gram matrix of the reference Laplacians of the basis."""
    rule = gauss_legendre(M + 3, d)
    L = displacement_basis(M, rule.points, deriv=2)
    G = L.T @ (rule.weights[:, None] * L)
    G.setflags(write=False)
    return G


# -- coefficients ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DisplacementCoeffs:
    """Expansion coefficients of a displacement field on a box."""

    M: int
    coeffs: np.ndarray  # (d, M**d), reference (unit-cube) units
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        d = len(self.lower)
        if c.shape != (d, self.M**d):
            c = c.reshape(d, self.M**d)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, M: int, grid: Grid) -> "DisplacementCoeffs":
        return cls(M, np.zeros((grid.dim, M**grid.dim)), grid.lower, grid.upper)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def length(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float) - self.lo

    def with_coeffs(self, coeffs) -> "DisplacementCoeffs":
        return replace(self, coeffs=np.asarray(coeffs, dtype=float).reshape(self.coeffs.shape))

    def pad(self, M: int) -> "DisplacementCoeffs":
        """Embed into the space of order ``M >= self.M`` (zero padding)."""
        if M < self.M:
            raise ValueError("cannot pad to a smaller order")
        d = self.dim
        new = np.zeros((d,) + (M,) * d)
        old = self.coeffs.reshape((d,) + (self.M,) * d)
        new[(slice(None),) + (slice(0, self.M),) * d] = old
        return DisplacementCoeffs(M, new.reshape(d, M**d), self.lower, self.upper)

    def to_reference(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.lo) / self.length

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return eval_displacement(self, x)


def _check_inside(c: DisplacementCoeffs, x: np.ndarray):
    lo, L = c.lo, c.length
    tol = 1e-12 * L
    if np.any(x < lo - tol) or np.any(x > lo + L + tol):
        raise ValueError("point outside the closure of the domain")


def eval_displacement(c: DisplacementCoeffs, x: np.ndarray, check: bool = True) -> np.ndarray:
    """Physical displacement at ``x``; shape ``(npts, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if check:
        _check_inside(c, x)
    B = displacement_basis(c.M, c.to_reference(x))
    return (B @ c.coeffs.T) * c.length


def displacement_jacobian(c: DisplacementCoeffs, x: np.ndarray) -> np.ndarray:
    """Physical gradient of ``Psi``: ``J[p, k, j] = d Psi_k / d x_j``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    G = displacement_basis(c.M, c.to_reference(x), deriv=1)  # (npts, d, nb)
    J = np.einsum("pjb,kb->pkj", G, c.coeffs)
    return J * (c.length[:, None] / c.length[None, :])


def forward_jacobian_min(c: DisplacementCoeffs, points: np.ndarray) -> float:
    """``min det(I + grad Psi)`` over ``points``."""
    J = displacement_jacobian(c, points)
    d = c.dim
    J = J + np.eye(d)
    return float(np.min(np.linalg.det(J)))


def regularizer(c: DisplacementCoeffs) -> float:
    """``||Lap Psi||_{L2}`` in reference coordinates."""
    G = _laplacian_gram(c.M, c.dim)
    val = np.einsum("ka,ab,kb->", c.coeffs, G, c.coeffs)
    return float(np.sqrt(max(val, 0.0)))


# -- matching criteria -----------------------------------------------------


class _L2Workspace:
    """Quadrature data shared by all L2 matching terms against one reference.

    The per-cell Gauss points of a structured grid form a tensor product of
    1D point sets, so the displacement on all of them is ``Q_x C Q_y^T`` with
    per-axis factor matrices ``Q``; this keeps evaluation linear in ``M``.
    """

    def __init__(self, grid: Grid, reference: np.ndarray, rule: QuadratureRule):
        self.grid = grid
        self.rule = rule
        order = (rule.degree + 1) // 2
        r1 = gauss_legendre(order, 1)
        self.axis_xhat = []
        axis_w = []
        for k, n in enumerate(grid.shape):
            s_k = (np.arange(n)[:, None] + r1.points[None, :, 0]).ravel() / n
            self.axis_xhat.append(s_k)
            axis_w.append(np.tile(r1.weights, n) * grid.h[k])
        mesh = np.meshgrid(*self.axis_xhat, indexing="ij")
        self.xhat = np.column_stack([m.ravel() for m in mesh])
        self.points = grid.lo + self.xhat * grid.length
        w = axis_w[0]
        for wk in axis_w[1:]:
            w = np.multiply.outer(w, wk).ravel()
        self.weights = w
        self.axis_shape = tuple(len(a) for a in self.axis_xhat)
        self.reference_cells = np.asarray(reference, dtype=float)
        self.reference_values = grid.interpolate(self.reference_cells, self.points)
        self._factors: dict[int, list[np.ndarray]] = {}

    def factors(self, M: int) -> list[np.ndarray]:
        Q = self._factors.get(M)
        if Q is None:
            # keep only the current order to bound memory
            self._factors.clear()
            Q = [_axis_factors(M, s)[0] for s in self.axis_xhat]
            self._factors[M] = Q
        return Q

    def displacement(self, c: "DisplacementCoeffs") -> np.ndarray:
        """Physical displacement at :attr:`points`, shape ``(npts, d)``."""
        Q = self.factors(c.M)
        M = c.M
        if self.grid.dim == 1:
            return (Q[0] @ c.coeffs[0])[:, None] * self.grid.length
        cols = [(Q[0] @ c.coeffs[k].reshape(M, M) @ Q[1].T).ravel() for k in range(2)]
        return np.column_stack(cols) * self.grid.length

    def pullback(self, M: int, field_values: np.ndarray) -> np.ndarray:
        """``B^T f`` for point values ``f`` of shape ``(npts, d)`` -> ``(d, M**d)``."""
        Q = self.factors(M)
        if self.grid.dim == 1:
            return (Q[0].T @ field_values)[:, :].T.reshape(1, M)
        out = []
        for k in range(2):
            F = field_values[:, k].reshape(self.axis_shape)
            out.append((Q[0].T @ F @ Q[1]).ravel())
        return np.array(out)


class L2Snapshot:
    """Squared L2 distance between the warped target and the reference.

    ``D(Psi) = int (u_z(x + Psi(x)) - u_ref(x))^2 dx`` by per-cell quadrature,
    both snapshots interpolated multilinearly from their cell values.

    With ``normalize=True`` the target is first rescaled to the discrete L2
    norm of the reference, so that a pure change of amplitude is not
    compensated by stretching. Targets with (numerically) zero norm are left
    unscaled.
    """

    def __init__(self, grid: Grid, reference, target, rule: QuadratureRule | None = None,
                 workspace: _L2Workspace | None = None, normalize: bool = False):
        if workspace is None:
            workspace = _L2Workspace(grid, reference, rule or gauss_legendre(3, grid.dim))
        self.ws = workspace
        target = np.asarray(target, dtype=float)
        self.scale = 1.0
        if normalize:
            ref_norm = np.sqrt(grid.cell_volume * np.sum(workspace.reference_cells**2))
            tgt_norm = np.sqrt(grid.cell_volume * np.sum(target**2))
            if tgt_norm > 1e-12 * max(ref_norm, 1.0):
                self.scale = ref_norm / tgt_norm
        self.target = self.scale * target

    @classmethod
    def family(cls, grid: Grid, reference, targets, rule: QuadratureRule | None = None,
               normalize: bool = False):
        ws = _L2Workspace(grid, reference, rule or gauss_legendre(3, grid.dim))
        return [cls(grid, None, t, workspace=ws, normalize=normalize) for t in targets]

    def value_and_grad(self, c: DisplacementCoeffs):
        ws = self.ws
        g = ws.grid
        y = g.clamp(ws.points + ws.displacement(c))
        u, du = g.interpolate(self.target, y, grad=True)
        r = u - ws.reference_values
        wr = ws.weights * r
        D = float(wr @ r)
        grad = 2.0 * ws.pullback(c.M, wr[:, None] * du) * g.length[:, None]
        return D, grad


class PointSet:
    """Squared distance between target points and displaced reference points."""

    def __init__(self, grid: Grid, reference_points, target_points):
        self.grid = grid
        self.reference_points = np.atleast_2d(np.asarray(reference_points, dtype=float))
        self.target_points = np.atleast_2d(np.asarray(target_points, dtype=float))
        if len(self.reference_points) < 3:
            raise ValueError("point-set matching needs at least 3 points")
        if self.reference_points.shape != self.target_points.shape:
            raise ValueError("reference and target point sets differ in shape")
        self._xhat = (self.reference_points - grid.lo) / grid.length
        self._basis: dict[int, np.ndarray] = {}

    def value_and_grad(self, c: DisplacementCoeffs):
        B = self._basis.get(c.M)
        if B is None:
            B = self._basis[c.M] = displacement_basis(c.M, self._xhat)
        L = self.grid.length
        res = self.target_points - self.reference_points - (B @ c.coeffs.T) * L
        D = float(np.sum(res**2))
        grad = -2.0 * (res.T @ B) * L[:, None]
        return D, grad


def square_boundary_points(center, half_width: float, n_points: int) -> np.ndarray:
    """``n_points`` equispaced points along the boundary of an axis-aligned square."""
    center = np.asarray(center, dtype=float)
    side = 2.0 * half_width
    s = np.arange(n_points) * (4.0 * side / n_points)
    edge = np.minimum((s // side).astype(int), 3)
    r = s - edge * side
    start = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float) * half_width
    direction = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    return center + start[edge] + r[:, None] * direction[edge]


# -- objective and optimizer -------------------------------------------------


@dataclass(frozen=True)
class RegistrationConfig:
    epsilon: float = 1e-2
    tol_M: float = 1e-3
    max_M: int = 8
    gtol: float = 1e-6
    maxiter: int = 200
    matching_power: float = 1.0
    quad_order: int = 3
    patience: int = 2
    jacobian_floor: float = 0.05
    max_refits: int = 4

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.tol_M <= 0:
            raise ValueError("tol_M must be positive")
        if self.max_M < 1:
            raise ValueError("max_M must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.jacobian_floor >= 1.0 or self.max_refits < 0:
            raise ValueError("jacobian_floor must be < 1 and max_refits >= 0")


def objective_and_grad(c: DisplacementCoeffs, crit, eps: float, power: float = 1.0):
    """``F = D**power + eps * R**2`` with its coefficient gradient.

    ``D`` is the matching value of ``crit``, already a squared distance
    (integrated squared mismatch or summed squared point distances), so the
    default ``power = 1`` balances two quadratic terms; ``power = 2`` squares
    the matching value once more.  Returns ``(F, dF, D)``.
    """
    D, dD = crit.value_and_grad(c)
    G = _laplacian_gram(c.M, c.dim)
    R2 = float(np.einsum("ka,ab,kb->", c.coeffs, G, c.coeffs))
    if power == 1.0:
        F, dF = D, dD
    else:
        F = D**power
        dF = power * D ** (power - 1.0) * dD if D > 0 else np.zeros_like(dD)
    F += eps * R2
    dF = dF + 2.0 * eps * (c.coeffs @ G)
    return F, dF, D


def objective(c: DisplacementCoeffs, crit, eps: float, power: float = 1.0) -> float:
    return objective_and_grad(c, crit, eps, power)[0]


@dataclass
class RegistrationRun:
    coeffs: DisplacementCoeffs
    objective: float
    initial_objective: float
    matching: float
    iterations: int
    message: str


def register_one(c0: DisplacementCoeffs, crit, cfg: RegistrationConfig = RegistrationConfig()) -> RegistrationRun:
    """Quasi-Newton (BFGS) minimization of the registration objective from ``c0``."""
    F0, g0, D0 = objective_and_grad(c0, crit, cfg.epsilon, cfg.matching_power)
    if not np.isfinite(F0):
        raise RegistrationError(f"non-finite objective at the initial guess (F={F0})")
    if F0 == 0.0:
        return RegistrationRun(c0, 0.0, 0.0, D0, 0, "initial guess is optimal")
    # scale to unit initial value so the gradient tolerance is relative
    scale = 1.0 / F0

    def fun(flat):
        F, dF, _ = objective_and_grad(c0.with_coeffs(flat), crit, cfg.epsilon, cfg.matching_power)
        if not np.isfinite(F):
            raise RegistrationError(
                f"non-finite objective during line search (F={F}, |c|={np.linalg.norm(flat):.3g})"
            )
        return F * scale, dF.ravel() * scale

    res = minimize(
        fun, c0.coeffs.ravel(), jac=True, method="BFGS",
        options={"gtol": cfg.gtol, "maxiter": cfg.maxiter},
    )
    c = c0.with_coeffs(res.x)
    F, _, D = objective_and_grad(c, crit, cfg.epsilon, cfg.matching_power)
    if not F <= F0:
        c, F, D = c0, F0, D0
    return RegistrationRun(c, F, F0, D, int(res.nit), str(res.message))


def register_guarded(c0: DisplacementCoeffs, crit, cfg: RegistrationConfig, points):
    """:func:`register_one` with a fold check on ``points``.

    While ``min det(I + grad Psi)`` stays below ``cfg.jacobian_floor`` the
    sample is re-registered with ``epsilon`` four times larger, starting from
    zero displacement, at most ``cfg.max_refits`` times.  Returns the run,
    the weight used and the Jacobian minimum; if no refit clears the floor the
    run with the largest minimum is kept.
    """
    eps = cfg.epsilon
    run = register_one(c0, crit, cfg)
    jmin = forward_jacobian_min(run.coeffs, points)
    best = (run, eps, jmin)
    its = run.iterations
    for _ in range(cfg.max_refits):
        if jmin >= cfg.jacobian_floor:
            break
        eps = 4.0 * eps if eps > 0 else 1e-4
        run = register_one(c0.with_coeffs(np.zeros(c0.coeffs.size)), crit, replace(cfg, epsilon=eps))
        its += run.iterations
        jmin = forward_jacobian_min(run.coeffs, points)
        if jmin > best[2]:
            best = (run, eps, jmin)
    run, eps, jmin = best
    run.iterations = its
    return run, eps, jmin


@dataclass
class RegistrationResult:
    M: int
    coeffs: list  # DisplacementCoeffs per sample
    matching: np.ndarray  # final matching value per sample
    xi: list = field(default_factory=list)  # mean matching per tried order
    converged: bool = True
    iterations: int = 0
    epsilons: np.ndarray | None = None  # regularization weight used per sample
    jacobian_min: np.ndarray | None = None  # min det(I + grad Psi) per sample

    def coefficient_matrix(self) -> np.ndarray:
        return np.stack([c.coeffs.ravel() for c in self.coeffs])


def register_all(criteria, samples, z_ref, grid: Grid, cfg: RegistrationConfig = RegistrationConfig(),
                 param_lower=None, param_upper=None, progress=None) -> RegistrationResult:
    """Register every sample against the reference with order selection in ``M``.

    Samples are processed by increasing distance from ``z_ref`` in normalized
    parameter coordinates; each run starts from the better of (a) the nearest
    already-registered sample at this order (``z_ref`` itself counting as
    solved with zero displacement) and (b) the sample's own result at the
    previous order, zero-padded.  Orders ``M = 1, 2, ...`` are tried until the
    relative change of the mean matching value stays below ``tol_M`` for
    ``cfg.patience`` consecutive increments; the first order of that calm
    run is returned.  A patience of 2 avoids stopping when a symmetric
    problem gains nothing from the odd Legendre degrees added by one step.
    """
    z = np.atleast_2d(np.asarray(samples, dtype=float))
    m = len(z)
    if len(criteria) != m:
        raise ValueError("one matching criterion per sample is required")
    lo = z.min(axis=0) if param_lower is None else np.asarray(param_lower, dtype=float)
    hi = z.max(axis=0) if param_upper is None else np.asarray(param_upper, dtype=float)
    span = np.where(hi > lo, hi - lo, 1.0)
    zn = (z - lo) / span
    zr = (np.asarray(z_ref, dtype=float) - lo) / span
    d_ref = np.linalg.norm(zn - zr, axis=1)
    order = np.argsort(d_ref, kind="stable")
    pair = np.linalg.norm(zn[:, None, :] - zn[None, :, :], axis=2)

    prev: list | None = None
    history = []
    best = None
    total_it = 0
    xi_prev = None
    calm = 0
    kept = []
    for M in range(1, cfg.max_M + 1):
        zero = DisplacementCoeffs.zeros(M, grid)
        coeffs: list = [None] * m
        match = np.empty(m)
        eps_used = np.empty(m)
        jmins = np.empty(m)
        solved = np.zeros(m, dtype=bool)
        for i in order:
            starts = []
            if solved.any():
                cand = np.flatnonzero(solved)
                j = cand[np.argmin(pair[i, cand])]
                if pair[i, j] < d_ref[i]:
                    starts.append(coeffs[j])
            if not starts:
                starts.append(zero)
            if prev is not None:
                starts.append(prev[i].pad(M))
            if len(starts) > 1:
                vals = [objective(s, criteria[i], cfg.epsilon, cfg.matching_power) for s in starts]
                c0 = starts[int(np.argmin(vals))]
            else:
                c0 = starts[0]
            run, eps_used[i], jmins[i] = register_guarded(c0, criteria[i], cfg, grid.centers)
            total_it += run.iterations
            coeffs[i] = run.coeffs
            match[i] = run.matching
            solved[i] = True
        if np.any(jmins < cfg.jacobian_floor):
            warnings.warn(
                f"M={M}: {int(np.sum(jmins < cfg.jacobian_floor))} sample(s) keep a Jacobian below "
                f"{cfg.jacobian_floor:g} (min {jmins.min():.3g}) after {cfg.max_refits} refits",
                RuntimeWarning, stacklevel=2,
            )
        xi = float(np.mean(match))
        history.append(xi)
        if progress is not None:
            progress(M, xi)
        log.info("registration order M=%d: mean matching %.6e", M, xi)
        kept.append((coeffs, match, eps_used, jmins))
        if best is None or xi < best[1]:
            best = (M, xi, coeffs, match, eps_used, jmins)
        if xi_prev is not None:
            if xi_prev == 0.0 or abs(xi - xi_prev) / xi_prev <= cfg.tol_M:
                calm += 1
            else:
                calm = 0
            if xi_prev == 0.0 or calm >= cfg.patience:
                M_sel = M - cfg.patience + 1 if xi_prev != 0.0 else M
                k = M_sel - 1
                return RegistrationResult(M_sel, kept[k][0], kept[k][1], history, True, total_it,
                                          kept[k][2], kept[k][3])
        xi_prev = xi
        prev = coeffs
    warnings.warn(
        f"registration order selection did not converge up to M={cfg.max_M}; "
        f"using M={best[0]}", RuntimeWarning, stacklevel=2,
    )
    return RegistrationResult(best[0], best[2], best[3], history, False, total_it, best[4], best[5])


# -- transformed snapshots -------------------------------------------------


def warped_points(c: DisplacementCoeffs, grid: Grid, rule: QuadratureRule) -> np.ndarray:
    pts = grid.quadrature_points(rule)
    return grid.clamp(pts + eval_displacement(c, pts, check=False))


def transform_snapshot(u: np.ndarray, c: DisplacementCoeffs, grid: Grid, rule: QuadratureRule | None = None):
    """Cell-wise projection of ``u(x + Psi(x))``.

    ``u`` holds cell values (optionally with trailing columns).  It is
    sampled at the warped quadrature points through its limited
    piecewise-linear reconstruction, so ``c = 0`` returns ``u`` unchanged.
    """
    rule = rule or gauss_legendre(3, grid.dim)
    y = warped_points(c, grid, rule)
    return grid.cell_average(grid.evaluate_linear(np.asarray(u, dtype=float), y), rule)
