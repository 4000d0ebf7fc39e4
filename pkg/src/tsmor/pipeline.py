"""Offline and online phases of the transformed-snapshot regression model.

Offline (:func:`run_offline`)
    HF snapshots, registration against the reference parameter, transformed
    snapshots ``g``, their POD and one GP per coefficient, pointwise inverse
    maps, their POD and GPs, and finally a GP of the training errors used as
    an error surrogate.

Online (:func:`run_online`)
    Mean GP predictions of the ``g`` coefficients and of the inverse
    displacement, then the per-cell quadrature of ``g_n(x + Psi~(x))``.

The untransformed POD basis of the raw snapshots is kept for the orthogonal
projection baseline (:func:`s_proj_baseline`).  ``mode="identity"`` fixes
both transforms to the identity and reduces everything to POD plus GPR on the
raw snapshots.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gpr as gp
from .grid import Grid, Triangulation, gauss_legendre
from .hf import TestCase, sample_snapshots
from .invmap import (
    InverseModel,
    P1Projector,
    build_inverse_snapshot,
    fit_inverse_model,
    forward_jacobian_min,
    inverse_jacobian_min,
    predict_inverse,
    round_trip_error,
)
from .pod import PodBasis, compute_pod, project_onto_basis, reconstruct
from .registration import (
    DisplacementCoeffs,
    L2Snapshot,
    PointSet,
    RegistrationConfig,
    register_all,
    square_boundary_points,
    transform_snapshot,
)

__all__ = [
    "PipelineConfig",
    "ErrorSurrogate",
    "OfflineArtifacts",
    "OnlineResult",
    "make_criteria",
    "run_offline",
    "run_identity_mode",
    "run_online",
    "predict_fields",
    "predict_coefficients",
    "CoefficientPredictions",
    "compose",
    "fit_error_surrogate",
    "s_proj_baseline",
    "relative_l1_error",
    "average_error",
    "efficiency_index",
    "speedup",
]

log = logging.getLogger(__name__)

MODES = ("tsmor", "identity")
HEAT_HALF_WIDTH = 0.25
HEAT_POINTS = 400


@dataclass
class PipelineConfig:
    """Truncations and solver settings of one offline run.

    ``n`` and ``n_psi`` are the largest truncations trained; online queries
    may use any smaller values because POD bases are nested.  The error
    surrogate is trained for ``(error_n, error_n_psi)``, which default to
    ``(n, n_psi)``.
    """

    n: int = 5
    n_psi: int = 5
    mode: str = "tsmor"
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    gpr_restarts: int = 5
    seed: int = 0
    quad_order: int = 3
    error_components: tuple[int, ...] | None = None
    error_n: int | None = None
    error_n_psi: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n < 1 or self.n_psi < 1:
            raise ValueError("n and n_psi must be positive")
        if isinstance(self.registration, dict):
            self.registration = RegistrationConfig(**self.registration)
        if self.error_components is not None:
            self.error_components = tuple(int(k) for k in self.error_components)
        if self.error_n is not None and not 1 <= self.error_n <= self.n:
            raise ValueError("error_n must lie in [1, n]")
        if self.error_n_psi is not None and not 0 <= self.error_n_psi <= self.n_psi:
            raise ValueError("error_n_psi must lie in [0, n_psi]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["error_components"] = None if self.error_components is None else list(self.error_components)
        return d


@dataclass
class ErrorSurrogate:
    """GP of in-sample errors; predictions are shifted by two std devs."""

    model: gp.GprModel
    n: int
    n_psi: int
    lam: float = 2.0

    def predict(self, z) -> np.ndarray:
        return np.maximum(gp.predict(self.model, z, self.lam), 0.0)


@dataclass
class OfflineArtifacts:
    test: TestCase
    grid: Grid
    config: PipelineConfig
    samples: np.ndarray
    z_ref: np.ndarray
    M: int
    coeffs: np.ndarray  # (m, d, M**d)
    g_bases: list[PodBasis]
    g_gprs: list[list[gp.GprModel]]
    u_bases: list[PodBasis]
    inverse: InverseModel | None
    surrogate: ErrorSurrogate | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self._projector = None
        self._tri = None

    @property
    def n_components(self) -> int:
        return len(self.g_bases)

    @property
    def m(self) -> int:
        return len(self.samples)

    @property
    def rule(self):
        return gauss_legendre(self.config.quad_order, self.grid.dim)

    @property
    def triangulation(self) -> Triangulation:
        if self._tri is None:
            self._tri = Triangulation.from_grid(self.grid)
        return self._tri

    @property
    def projector(self) -> P1Projector:
        if self._projector is None:
            self._projector = P1Projector(self.triangulation, self.rule)
        return self._projector

    def displacement(self, i: int) -> DisplacementCoeffs:
        return DisplacementCoeffs(self.M, self.coeffs[i], self.grid.lower, self.grid.upper)

    def in_hull(self, z) -> bool:
        z = np.asarray(z, dtype=float).ravel()
        lo, hi = self.samples.min(axis=0), self.samples.max(axis=0)
        tol = 1e-12 * np.maximum(hi - lo, 1.0)
        return bool(np.all(z >= lo - tol) and np.all(z <= hi + tol))


@dataclass
class OnlineResult:
    u: np.ndarray  # (n_components, N)
    error: float
    timings: dict
    extrapolated: bool = False


# -- helpers -----------------------------------------------------------------


def make_criteria(test: TestCase, grid: Grid, samples, snapshots=None, reference=None, rule=None):
    """Matching criteria per sample: L2 snapshot distance or interface points."""
    samples = np.atleast_2d(samples)
    if test.name == "heat2d":
        ref = square_boundary_points(0.5 + test.z_ref[0] * np.ones(2), HEAT_HALF_WIDTH, HEAT_POINTS)
        return [
            PointSet(grid, ref, square_boundary_points(0.5 + z[0] * np.ones(2), HEAT_HALF_WIDTH, HEAT_POINTS))
            for z in samples
        ]
    if snapshots is None or reference is None:
        raise ValueError(f"{test.name} registration needs snapshots and a reference snapshot")
    return L2Snapshot.family(grid, reference, snapshots, rule)


def relative_l1_error(u_ref, u_approx, weight: float = 1.0) -> float:
    """``||u_ref - u_approx||_L1 / ||u_ref||_L1`` on a uniform grid."""
    u_ref = np.asarray(u_ref, dtype=float)
    u_approx = np.asarray(u_approx, dtype=float)
    if u_ref.shape != u_approx.shape:
        raise ValueError(f"shape mismatch {u_ref.shape} vs {u_approx.shape}")
    den = weight * np.sum(np.abs(u_ref))
    if not den > 0:
        raise ValueError("reference field has zero L1 norm")
    return float(weight * np.sum(np.abs(u_ref - u_approx)) / den)


def efficiency_index(E_pred, E_true):
    """``E_pred / E_true``; NaN (missing) where the true error vanishes."""
    E_pred = np.asarray(E_pred, dtype=float)
    E_true = np.asarray(E_true, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.where(E_true > 0, E_pred / np.where(E_true > 0, E_true, 1.0), np.nan)
    return eta if eta.ndim else float(eta)


def speedup(hf_times, mor_times) -> float:
    hf = float(np.sum(hf_times))
    mor = float(np.sum(mor_times))
    if not (hf > 0 and mor > 0):
        raise ValueError("timings must sum to positive values")
    return hf / mor


def compose(grid: Grid, g, nodal_inverse, projector: P1Projector | None, rule) -> np.ndarray:
    """Cell averages of ``g(x + Psi~(x))`` for a P1 displacement ``Psi~``.

    ``g`` holds cell values with shape ``(N,)`` or ``(N, k)``; its limited
    piecewise-linear reconstruction is sampled at the displaced Gauss points
    of every cell.
    """
    if nodal_inverse is None:
        y = grid.quadrature_points(rule)
    else:
        x = projector.points
        y = grid.clamp(x + projector.evaluate(np.asarray(nodal_inverse).T))
    return grid.cell_average(grid.evaluate_linear(np.asarray(g, dtype=float), y), rule)


# -- offline -----------------------------------------------------------------


def _train_coefficient_gprs(samples, alpha, restarts, seed, label, progress=None):
    models = []
    for i, a in enumerate(alpha):
        models.append(gp.train(samples, a, restarts=restarts, seed=seed + i))
        if progress is not None:
            progress(f"{label} GPR {i + 1}/{len(alpha)}")
    return models


def run_offline(test: TestCase, samples, config: PipelineConfig | None = None, grid: Grid | None = None,
                snapshots=None, hf_seconds=None, reference=None, progress=None) -> OfflineArtifacts:
    """Build all offline models for ``test`` from the training ``samples``.

    Precomputed ``snapshots`` of shape ``(m, n_components, N)`` (and the
    reference snapshot ``(n_components, N)``) may be supplied; otherwise they
    are computed with the HF solver.
    """
    cfg = config or PipelineConfig()
    grid = grid or test.make_grid()
    samples = test.check_samples(samples)
    m = len(samples)
    n_max = min(grid.n_cells, m)
    if cfg.n > n_max:
        raise ValueError(f"n = {cfg.n} exceeds min(N, m_tr) = {n_max}")
    rule = gauss_legendre(cfg.quad_order, grid.dim)
    timings: dict[str, float] = {}
    diag: dict = {}

    t0 = time.perf_counter()
    if snapshots is None:
        snapshots, hf_seconds = sample_snapshots(test, samples, grid)
    snapshots = np.asarray(snapshots, dtype=float)
    if snapshots.shape[0] != m:
        raise ValueError("one snapshot per training sample is required")
    timings["snapshots"] = time.perf_counter() - t0
    if hf_seconds is not None:
        diag["hf_seconds_total"] = float(np.sum(hf_seconds))
    ncomp = snapshots.shape[1]

    # registration and transformed snapshots
    t0 = time.perf_counter()
    if cfg.mode == "identity":
        M = 0
        coeffs = np.zeros((m, grid.dim, 0))
        G = snapshots.copy()
    else:
        if reference is None and test.name != "heat2d":
            reference, _ = sample_snapshots(test, test.z_ref[None, :], grid)
            reference = reference[0]
        crits = make_criteria(
            test, grid, samples,
            snapshots=snapshots[:, 0, :],
            reference=None if reference is None else np.asarray(reference)[0],
            rule=gauss_legendre(cfg.registration.quad_order, grid.dim),
        )
        res = register_all(crits, samples, test.z_ref, grid, cfg.registration,
                           test.param_lower, test.param_upper)
        M = res.M
        coeffs = res.coefficient_matrix()
        diag["registration"] = {
            "M": M,
            "xi": list(res.xi),
            "converged": bool(res.converged),
            "iterations": int(res.iterations),
            "mean_matching": float(np.mean(res.matching)),
            "epsilon_per_sample": None if res.epsilons is None else res.epsilons.tolist(),
        }
        G = np.empty_like(snapshots)
        for i, c in enumerate(res.coeffs):
            G[i] = transform_snapshot(snapshots[i].T, c, grid, rule).T
        diag["forward_jacobian_min"] = [forward_jacobian_min(c, grid) for c in res.coeffs]
    timings["registration"] = time.perf_counter() - t0

    # POD and coefficient GPRs
    t0 = time.perf_counter()
    w = float(grid.cell_volume)
    g_bases, u_bases, g_gprs = [], [], []
    for k in range(ncomp):
        SG = G[:, k, :].T
        SU = snapshots[:, k, :].T
        gb = compute_pod(SG, cfg.n, w)
        ub = gb if cfg.mode == "identity" else compute_pod(SU, cfg.n, w)
        alpha = project_onto_basis(SG, gb)
        g_gprs.append(_train_coefficient_gprs(samples, alpha, cfg.gpr_restarts, cfg.seed,
                                              f"g component {k}", progress))
        g_bases.append(gb)
        u_bases.append(ub)
    timings["g_model"] = time.perf_counter() - t0

    art = OfflineArtifacts(test, grid, cfg, samples, test.z_ref.copy(), M, coeffs,
                           g_bases, g_gprs, u_bases, None, None, diag)

    # inverse maps
    if cfg.mode != "identity":
        t0 = time.perf_counter()
        projector = art.projector
        inv = np.empty((m, grid.dim, art.triangulation.n_vertices))
        worst = 0.0
        inv_jac = []
        for i in range(m):
            snap = build_inverse_snapshot(art.displacement(i), projector)
            inv[i] = snap.nodal
            worst = max(worst, snap.worst_residual)
        n_psi = min(cfg.n_psi, m, inv.shape[2])
        art.inverse = fit_inverse_model(inv, samples, n_psi, restarts=cfg.gpr_restarts,
                                        seed=cfg.seed + 1000, progress=progress)
        rt = []
        for i in range(m):
            nodal = predict_inverse(art.inverse, samples[i])
            rt.append(round_trip_error(art.displacement(i), nodal, projector))
            inv_jac.append(inverse_jacobian_min(nodal, art.triangulation))
        diag["inversion_worst_residual"] = worst
        diag["round_trip_mean"] = float(np.mean(rt))
        diag["round_trip_max"] = float(np.max(rt))
        diag["inverse_jacobian_min"] = inv_jac
        diag["inverse_projection_error"] = [
            float(np.sqrt(np.sum(b.singular_values[n_psi:] ** 2) / max(np.sum(b.singular_values**2), 1e-300)))
            for b in art.inverse.bases
        ]
        timings["inverse_model"] = time.perf_counter() - t0

    # error surrogate from in-sample errors
    t0 = time.perf_counter()
    n_err = cfg.error_n or cfg.n
    n_psi_err = art.inverse.n_psi if art.inverse else 0
    if cfg.error_n_psi is not None and art.inverse is not None:
        n_psi_err = min(cfg.error_n_psi, n_psi_err)
    fit_error_surrogate(art, snapshots, n_err, n_psi_err)
    timings["error_surrogate"] = time.perf_counter() - t0
    diag["timings"] = timings
    return art


def run_identity_mode(test: TestCase, samples, n: int, **kwargs) -> OfflineArtifacts:
    """POD plus GPR on raw snapshots (both transforms fixed to the identity)."""
    cfg = kwargs.pop("config", None) or PipelineConfig(n=n, n_psi=1, mode="identity")
    if cfg.mode != "identity" or cfg.n != n:
        cfg = PipelineConfig(**{**cfg.to_dict(), "n": n, "mode": "identity",
                                "registration": cfg.registration})
    return run_offline(test, samples, cfg, **kwargs)


def _error_of(art: OfflineArtifacts, u_ref, u) -> float:
    comps = art.config.error_components
    if comps is not None:
        u_ref, u = u_ref[list(comps)], u[list(comps)]
    return relative_l1_error(u_ref, u, art.grid.cell_volume)


def fit_error_surrogate(art: OfflineArtifacts, snapshots, n: int, n_psi: int) -> ErrorSurrogate:
    """Train the error GP on in-sample errors at truncation ``(n, n_psi)``."""
    fields = predict_fields(art, art.samples, n, n_psi)
    errs = np.array([_error_of(art, snapshots[i], fields[i]) for i in range(art.m)])
    model = gp.train(art.samples, errs, restarts=art.config.gpr_restarts, seed=art.config.seed + 2000)
    art.surrogate = ErrorSurrogate(model, n, n_psi)
    art.diagnostics["training_errors"] = errs.tolist()
    return art.surrogate


# -- online ------------------------------------------------------------------


def _check_truncation(art, n, n_psi):
    n = art.config.n if n is None else int(n)
    if not 1 <= n <= art.g_bases[0].n:
        raise ValueError(f"n must lie in [1, {art.g_bases[0].n}]")
    if art.inverse is None:
        return n, 0
    n_psi = art.inverse.n_psi if n_psi is None else int(n_psi)
    if not 0 <= n_psi <= art.inverse.n_psi:
        raise ValueError(f"n_psi must lie in [0, {art.inverse.n_psi}]")
    return n, n_psi


@dataclass
class CoefficientPredictions:
    """Mean GP predictions at a batch of parameters, for all trained modes.

    ``g`` holds one ``(n_max, len(Z))`` array per solution component and
    ``inverse`` one ``(n_psi_max, len(Z))`` array per spatial component (empty
    in identity mode).  Nested POD bases make any truncation a row slice.
    """

    Z: np.ndarray
    g: list[np.ndarray]
    inverse: list[np.ndarray]


def predict_coefficients(art: OfflineArtifacts, Z) -> CoefficientPredictions:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    g = [np.array([gp.predict(mdl, Z) for mdl in models]).reshape(len(models), len(Z))
         for models in art.g_gprs]
    inv = []
    if art.inverse is not None:
        inv = [np.array([gp.predict(mdl, Z) for mdl in models]).reshape(len(models), len(Z))
               for models in art.inverse.gprs]
    return CoefficientPredictions(Z, g, inv)


def predict_fields(art: OfflineArtifacts, Z, n: int | None = None, n_psi: int | None = None,
                   coefficients: CoefficientPredictions | None = None) -> np.ndarray:
    """Reduced solutions at every row of ``Z``, shape ``(len(Z), ncomp, N)``.

    Passing ``coefficients`` from :func:`predict_coefficients` skips the GP
    evaluations, which is what a sweep over truncations wants.
    """
    n, n_psi = _check_truncation(art, n, n_psi)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if coefficients is None:
        coefficients = predict_coefficients(art, Z)
    elif coefficients.Z.shape != Z.shape or not np.array_equal(coefficients.Z, Z):
        raise ValueError("coefficient predictions were made for different parameters")
    out = np.empty((len(Z), art.n_components, art.grid.n_cells))
    for j in range(len(Z)):
        g = np.column_stack([reconstruct(a[:n, j], b)
                             for a, b in zip(coefficients.g, art.g_bases)])
        nodal = None
        if art.inverse is not None:
            nodal = np.array([
                reconstruct(a[:n_psi, j], b) if n_psi else np.zeros(b.N)
                for a, b in zip(coefficients.inverse, art.inverse.bases)
            ])
        out[j] = compose(art.grid, g, nodal, art.projector if nodal is not None else None, art.rule).T
    return out


def run_online(art: OfflineArtifacts, z, n: int | None = None, n_psi: int | None = None) -> OnlineResult:
    """Reduced solution and predicted error at a single parameter ``z``."""
    n, n_psi = _check_truncation(art, n, n_psi)
    z = art.test.check_samples(np.atleast_2d(z))[0]
    extrapolated = not art.in_hull(z)
    if extrapolated:
        warnings.warn(f"parameter {z.tolist()} lies outside the training samples", RuntimeWarning,
                      stacklevel=2)
    tm = {}
    t0 = time.perf_counter()
    alpha = [np.array([gp.predict(mdl, z[None])[0] for mdl in models[:n]]) for models in art.g_gprs]
    tm["coefficients"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    g = np.column_stack([reconstruct(a, b) for a, b in zip(alpha, art.g_bases)])
    tm["reconstruct"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    nodal = predict_inverse(art.inverse, z, n_psi) if art.inverse is not None else None
    tm["inverse"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    u = compose(art.grid, g, nodal, art.projector if nodal is not None else None, art.rule).T
    tm["compose"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    err = float(art.surrogate.predict(z[None])[0]) if art.surrogate is not None else float("nan")
    tm["surrogate"] = time.perf_counter() - t0
    tm["total"] = sum(tm.values())
    return OnlineResult(u, err, tm, extrapolated)


def s_proj_baseline(art: OfflineArtifacts, u_hf, n: int) -> np.ndarray:
    """Orthogonal projection of an HF solution onto the untransformed basis."""
    u_hf = np.atleast_2d(np.asarray(u_hf, dtype=float))
    out = np.empty_like(u_hf)
    for k, b in enumerate(art.u_bases):
        bn = b.truncate(n)
        out[k] = reconstruct(project_onto_basis(u_hf[k], bn), bn)
    return out


def average_error(art: OfflineArtifacts, Z, n: int | None = None, n_psi: int | None = None,
                  references=None, method: str = "tsmor", coefficients=None):
    """Mean relative L1 error over the test parameters ``Z``.

    ``method`` is ``"tsmor"`` for the reduced model or ``"sproj"`` for the
    projection baseline.  Returns ``(mean, per_sample_errors)``; references
    are computed with the HF solver when not supplied.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if len(Z) == 0:
        raise ValueError("empty test set")
    if references is None:
        references, _ = sample_snapshots(art.test, Z, art.grid)
    if method == "tsmor":
        approx = predict_fields(art, Z, n, n_psi, coefficients)
    elif method == "sproj":
        n = art.config.n if n is None else n
        approx = np.array([s_proj_baseline(art, r, n) for r in references])
    else:
        raise ValueError(f"unknown method {method!r}")
    errs = np.array([_error_of(art, references[i], approx[i]) for i in range(len(Z))])
    return float(np.mean(errs)), errs
