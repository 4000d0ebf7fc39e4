"""Gaussian process regression with a linear mean and an ARD kernel.

The prior is ``h(z) ~ GP(beta^T Phi(z), k(z, z'))`` with ``Phi(z) = (1, z_1,
..., z_p)`` and the squared-exponential kernel

    k(z, z') = kappa1^2 exp(-1/2 sum_d (z_d - z'_d)^2 / l_d^2).

Observations carry i.i.d. Gaussian noise of standard deviation
``noise_sigma``.  Hyper-parameters are fitted by maximum likelihood with
L-BFGS-B on ``(beta, log kappa1, log l, log noise_sigma)``.  Inputs and
targets are standardized internally; :class:`GprModel` stores the
hyper-parameters in those standardized coordinates together with the
affine maps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

__all__ = [
    "GprHyperparams",
    "GprModel",
    "GprError",
    "kernel_eval",
    "kernel_matrix",
    "log_likelihood",
    "train",
    "predict",
    "predict_mean_std",
]

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-6  # relative to the target standard deviation
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
_LOG2PI = np.log(2.0 * np.pi)


class GprError(RuntimeError):
    """Covariance factorization failed even with the largest jitter."""


@dataclass(frozen=True)
class GprHyperparams:
    beta: np.ndarray  # (p + 1,)
    kappa1: float
    length_scales: np.ndarray  # (p,)
    noise_sigma: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(
            self, "length_scales", np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        )
        if self.beta.size != self.length_scales.size + 1:
            raise ValueError("beta must have one entry more than length_scales")
        if not self.kappa1 > 0 or np.any(self.length_scales <= 0) or self.noise_sigma < 0:
            raise ValueError("kappa1 and length scales must be positive, noise non-negative")

    @property
    def p(self) -> int:
        return self.length_scales.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.beta, [np.log(self.kappa1)], np.log(self.length_scales), [np.log(self.noise_sigma)]]
        )

    @classmethod
    def from_vector(cls, v, p: int) -> "GprHyperparams":
        v = np.asarray(v, dtype=float)
        return cls(v[: p + 1], float(np.exp(v[p + 1])), np.exp(v[p + 2 : 2 * p + 2]), float(np.exp(v[-1])))


def _features(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _sqdist(A, B, length_scales):
    """Per-dimension squared distances scaled by ``l_d^2``, shape (p, a, b)."""
    length_scales = np.broadcast_to(np.asarray(length_scales, dtype=float), (A.shape[1],))
    out = np.empty((A.shape[1], A.shape[0], B.shape[0]))
    for d, ell in enumerate(length_scales):
        np.subtract.outer(A[:, d] / ell, B[:, d] / ell, out=out[d])
    return np.square(out, out=out)


def kernel_eval(hp: GprHyperparams, z1, z2) -> float:
    """Kernel value for a single pair of inputs."""
    d = (np.atleast_1d(np.asarray(z1, dtype=float)) - np.atleast_1d(np.asarray(z2, dtype=float)))
    if d.size != hp.p:
        raise ValueError(f"inputs have dimension {d.size}, kernel expects {hp.p}")
    return float(hp.kappa1**2 * np.exp(-0.5 * np.sum((d / hp.length_scales) ** 2)))


def kernel_matrix(hp: GprHyperparams, A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return hp.kappa1**2 * np.exp(-0.5 * _sqdist(A, B, hp.length_scales).sum(axis=0))


def _factor(K):
    """Cholesky factor with escalating diagonal jitter; returns (factor, jitter)."""
    m = K.shape[0]
    scale = max(np.trace(K) / m, 1e-300)
    for j in _JITTERS:
        try:
            c = sla.cho_factor(K + (j * scale) * np.eye(m), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        return c, j * scale
    raise GprError("covariance matrix not positive definite after jitter escalation")


def log_likelihood(hp: GprHyperparams, X, y, grad: bool = False):
    """Gaussian log marginal likelihood of ``y`` at inputs ``X``.

    With ``grad=True`` also returns the gradient with respect to
    ``hp.to_vector()``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    m = y.size
    if m < 2 or X.shape[0] != m:
        raise ValueError("need at least two training points with matching inputs")
    D = _sqdist(X, X, hp.length_scales)
    E = np.exp(-0.5 * D.sum(axis=0))
    k2 = hp.kappa1**2
    s2 = hp.noise_sigma**2
    K = k2 * E + s2 * np.eye(m)
    cf, _ = _factor(K)
    Phi = _features(X)
    r = y - Phi @ hp.beta
    a = sla.cho_solve(cf, r, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    ll = -0.5 * r @ a - 0.5 * logdet - 0.5 * m * _LOG2PI
    if not grad:
        return float(ll)
    Kinv, info = sla.lapack.dpotri(cf[0], lower=1)
    if info != 0:
        raise GprError("inverse of the covariance factor failed")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    Q = np.outer(a, a) - Kinv
    kE = k2 * E
    g_beta = Phi.T @ a
    g_kappa = np.sum(Q * kE)  # 0.5 tr(Q dK), dK = 2 k2 E
    g_len = 0.5 * np.einsum("ij,dij->d", Q * kE, D)
    g_noise = np.trace(Q) * s2
    return float(ll), np.concatenate([g_beta, [g_kappa], g_len, [g_noise]])


@dataclass
class GprModel:
    """A trained GP in standardized coordinates plus its affine maps."""

    hyperparams: GprHyperparams
    X: np.ndarray  # original training inputs (m, p)
    y: np.ndarray  # original targets (m,)
    x_shift: np.ndarray
    x_scale: np.ndarray
    y_shift: float
    y_scale: float
    log_likelihood: float = float("nan")

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        self._prepare()

    def _prepare(self):
        hp = self.hyperparams
        Xs = self.standardize(self.X)
        ys = (self.y - self.y_shift) / self.y_scale
        K = kernel_matrix(hp, Xs, Xs) + hp.noise_sigma**2 * np.eye(len(ys))
        self._cf, jitter = _factor(K)
        if jitter > 0:
            # fold the jitter into the reported noise so that the
            # predictive equations stay exact for the factored matrix
            self.hyperparams = GprHyperparams(
                hp.beta, hp.kappa1, hp.length_scales, float(np.sqrt(hp.noise_sigma**2 + jitter))
            )
        self._Xs = Xs
        self._alpha = sla.cho_solve(self._cf, ys - _features(Xs) @ self.hyperparams.beta)

    @property
    def m(self) -> int:
        return self.y.size

    @property
    def noise_sigma(self) -> float:
        """Noise standard deviation in target units."""
        return self.hyperparams.noise_sigma * self.y_scale

    def standardize(self, Z) -> np.ndarray:
        return (np.atleast_2d(np.asarray(Z, dtype=float)) - self.x_shift) / self.x_scale

    def to_arrays(self) -> dict:
        hp = self.hyperparams
        return {
            "X": self.X,
            "y": self.y,
            "theta": hp.to_vector(),
            "affine": np.concatenate([self.x_shift, self.x_scale, [self.y_shift, self.y_scale]]),
            "log_likelihood": np.array([self.log_likelihood]),
        }

    @classmethod
    def from_arrays(cls, arrs: dict) -> "GprModel":
        X = np.atleast_2d(arrs["X"])
        p = X.shape[1]
        aff = np.asarray(arrs["affine"], dtype=float)
        return cls(
            GprHyperparams.from_vector(arrs["theta"], p),
            X,
            arrs["y"],
            aff[:p],
            aff[p : 2 * p],
            float(aff[2 * p]),
            float(aff[2 * p + 1]),
            float(np.asarray(arrs.get("log_likelihood", [np.nan]))[0]),
        )


def _initial_guess(Xs, ys):
    p = Xs.shape[1]
    span = np.ptp(Xs, axis=0)
    span[span == 0] = 1.0
    beta = np.linalg.lstsq(_features(Xs), ys, rcond=None)[0]
    return GprHyperparams(beta, 1.0, span / 2.0, 1e-3).to_vector()


def train(X, y, restarts: int = 5, seed: int = 0, maxiter: int = 200,
          noise_floor: float = NOISE_FLOOR) -> GprModel:
    """Maximum-likelihood GP fit with ``restarts`` initializations.

    The first start is the heuristic guess (length scales half the input
    range, unit amplitude and 1e-3 noise in standardized units, OLS mean);
    the others perturb it randomly with a generator seeded by ``seed``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and X.shape[1] > 1 and np.asarray(y).size > 1:
        X = X.T
    y = np.asarray(y, dtype=float).ravel()
    m, p = X.shape
    if m < 2 or y.size != m:
        raise ValueError("need at least two training points with matching targets")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
        raise ValueError("training data must be finite")

    x_shift = X.mean(axis=0)
    x_scale = X.std(axis=0)
    x_scale[x_scale == 0] = 1.0
    y_shift = float(y.mean())
    y_scale = float(y.std())
    if y_scale == 0.0:
        y_scale = 1.0
    Xs = (X - x_shift) / x_scale
    ys = (y - y_shift) / y_scale

    lo_noise = np.log(noise_floor)
    bounds = (
        [(None, None)] * (p + 1)
        + [(np.log(1e-4), np.log(1e3))]
        + [(np.log(1e-3), np.log(1e3))] * p
        + [(lo_noise, np.log(10.0))]
    )

    def nll(v):
        try:
            ll, g = log_likelihood(GprHyperparams.from_vector(v, p), Xs, ys, grad=True)
        except GprError:
            return 1e20, np.zeros_like(v)
        if not np.isfinite(ll):
            return 1e20, np.zeros_like(v)
        return -ll, -g

    v0 = _initial_guess(Xs, ys)
    v0[-1] = max(v0[-1], lo_noise)
    rng = np.random.default_rng(seed)
    starts = [v0]
    for _ in range(max(restarts, 1) - 1):
        v = v0.copy()
        v[p + 1] += rng.normal(0.0, 0.5)
        v[p + 2 : 2 * p + 2] += rng.normal(0.0, 1.0, size=p)
        v[-1] = rng.uniform(np.log(1e-4), np.log(1e-1))
        starts.append(v)

    best, best_f = None, np.inf
    f0 = nll(v0)[0]
    for v in starts:
        lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
        hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
        v = np.clip(v, lo, hi)
        res = minimize(nll, v, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": maxiter})
        if np.isfinite(res.fun) and res.fun < best_f:
            best, best_f = res.x, float(res.fun)
    if best is None or best_f >= 1e20:
        raise GprError("all restarts failed to factor the covariance matrix")
    if best_f > f0:
        best, best_f = v0, f0
    hp = GprHyperparams.from_vector(best, p)
    return GprModel(hp, X, y, x_shift, x_scale, y_shift, y_scale, -best_f)


def predict_mean_std(model: GprModel, Z):
    """Posterior mean and standard deviation (target units) at rows of ``Z``."""
    Zs = model.standardize(Z)
    if Zs.shape[1] != model.X.shape[1]:
        raise ValueError(f"inputs have dimension {Zs.shape[1]}, model expects {model.X.shape[1]}")
    hp = model.hyperparams
    Ks = kernel_matrix(hp, Zs, model._Xs)
    mean = _features(Zs) @ hp.beta + Ks @ model._alpha
    v = sla.solve_triangular(model._cf[0], Ks.T, lower=True, check_finite=False)
    var = np.maximum(hp.kappa1**2 - np.sum(v**2, axis=0), 0.0)
    return model.y_shift + model.y_scale * mean, model.y_scale * np.sqrt(var)


def predict(model: GprModel, Z, lam: float = 0.0) -> np.ndarray:
    """Shifted prediction ``mean + lam * std`` at the rows of ``Z``."""
    mean, std = predict_mean_std(model, Z)
    if lam == 0.0:
        return mean
    return mean + lam * std
