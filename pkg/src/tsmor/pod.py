"""Proper orthogonal decomposition of snapshot matrices.

Snapshots are stored column-wise in an ``N x m`` matrix.  All grids in this
package are uniform, so the discrete L2 inner product is a dot product scaled
by the constant cell volume ``w``.  A :class:`PodBasis` keeps its modes
orthonormal in that weighted inner product, i.e. ``w * X.T @ X = I``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SnapshotMatrix",
    "PodBasis",
    "compute_pod",
    "projection_error",
    "explicit_projection_error",
    "project_onto_basis",
    "reconstruct",
]

PROVENANCE = ("transformed", "untransformed", "inverse-displacement-component")


@dataclass
class SnapshotMatrix:
    """Dense snapshot matrix with the parameter samples of its columns."""

    data: np.ndarray  # (N, m)
    samples: np.ndarray  # (m, p)
    tag: str = "untransformed"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.data.ndim != 2:
            raise ValueError("snapshot data must be an N x m matrix")
        if self.data.shape[1] != self.samples.shape[0]:
            raise ValueError(
                f"{self.data.shape[1]} snapshot columns but {self.samples.shape[0]} samples"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("snapshot matrix has non-finite entries")
        if self.tag not in PROVENANCE:
            raise ValueError(f"unknown provenance tag {self.tag!r}")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class PodBasis:
    """Leading POD modes and the full singular spectrum.

    Attributes
    ----------
    modes : ndarray, shape (N, n)
        Orthonormal columns under the inner product ``<a, b> = weight * a @ b``.
    singular_values : ndarray
        All singular values of ``sqrt(weight) * S`` in non-increasing order.
    weight : float
        Cell volume of the underlying uniform grid.
    """

    modes: np.ndarray
    singular_values: np.ndarray
    weight: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.modes.shape[1]

    @property
    def N(self) -> int:
        return self.modes.shape[0]

    def truncate(self, n: int) -> "PodBasis":
        if not 0 <= n <= self.n:
            raise ValueError(f"cannot truncate a basis of size {self.n} to {n}")
        return PodBasis(self.modes[:, :n], self.singular_values, self.weight, dict(self.meta))


def _as_matrix(S) -> np.ndarray:
    return S.data if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=float)


def compute_pod(S, n: int | None = None, weight: float = 1.0) -> PodBasis:
    """Thin-SVD POD basis with ``n`` modes (all of them if ``n`` is None).

    Each mode's sign is fixed so that its largest-magnitude entry is
    positive, which makes the basis reproducible.
    """
    A = _as_matrix(S)
    if weight <= 0:
        raise ValueError("weight must be positive")
    kmax = min(A.shape)
    if n is None:
        n = kmax
    if not 1 <= n <= kmax:
        raise ValueError(f"n must lie in [1, {kmax}], got {n}")
    sw = np.sqrt(weight)
    U, s, _ = np.linalg.svd(sw * A, full_matrices=False)
    U = U[:, :n]
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(n)])
    signs[signs == 0] = 1.0
    return PodBasis(U * signs / sw, s, float(weight))


def projection_error(basis: PodBasis, n: int) -> float:
    """Relative Frobenius residual of the rank-``n`` POD projection.

    Computed from the singular-value tail, ``sqrt(sum_{i>n} s_i^2) / ||S||_F``.
    """
    s = basis.singular_values
    if n < 0:
        raise ValueError("n must be non-negative")
    total = float(np.sum(s**2))
    if total == 0.0:
        return 0.0
    tail = float(np.sum(s[n:] ** 2))
    return float(np.sqrt(max(tail, 0.0) / total))


def explicit_projection_error(S, basis: PodBasis, n: int) -> float:
    """``||S - X_n X_n^T S||_F / ||S||_F`` evaluated directly."""
    A = _as_matrix(S)
    norm = np.linalg.norm(A)
    if norm == 0.0:
        return 0.0
    R = A - reconstruct(project_onto_basis(A, basis.truncate(n)), basis.truncate(n))
    return float(np.linalg.norm(R) / norm)


def project_onto_basis(f, basis: PodBasis) -> np.ndarray:
    """Coefficients of the orthogonal projection of ``f`` (N,) or (N, k)."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != basis.N:
        raise ValueError(f"field has {f.shape[0]} entries, basis expects {basis.N}")
    return basis.weight * (basis.modes.T @ f)


def reconstruct(alpha, basis: PodBasis) -> np.ndarray:
    """Linear combination of the first ``len(alpha)`` modes."""
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.shape[0]
    if n > basis.n:
        raise ValueError(f"{n} coefficients for a basis of size {basis.n}")
    return basis.modes[:, :n] @ alpha
