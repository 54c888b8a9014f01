"""Dense linear-algebra kernels used by the factor models.

Everything here is a pure function of its inputs and works in float64.
Symmetric positive semi-definite matrices that show up in the models
(sample covariances, residual covariances) are frequently rank deficient,
e.g. when a dictionary has fewer entries than the embedding dimension, so
the inverse-type routines clamp eigenvalues from below at a floor that
defaults to ``1e-9 * trace / dim``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg as sla

from .errors import DegenerateCovarianceError, DegenerateInputError, InsufficientDataError, ShapeError

logger = logging.getLogger(__name__)

FLOOR_SCALE = 1e-9
_SYM_RTOL = 1e-12
_PSD_RTOL = 1e-10
LOG_2PI = float(np.log(2.0 * np.pi))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Widen to a 2-D float64 array and reject non-finite entries."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name} contains NaN or Inf entries")
    return a


def _check_symmetric(a: np.ndarray, name: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    scale = np.linalg.norm(a)
    if scale > 0 and np.linalg.norm(a - a.T) > _SYM_RTOL * scale:
        raise ShapeError(f"{name} is not symmetric")


def default_floor(a: np.ndarray) -> float:
    """Eigenvalue floor ``1e-9 * trace / dim``, kept strictly positive."""
    dim = a.shape[0]
    floor = FLOOR_SCALE * float(np.trace(a)) / max(dim, 1)
    if not floor > 0:
        floor = np.finfo(np.float64).tiny
    return floor


def _fix_column_signs(u: np.ndarray, *others: np.ndarray):
    # largest-magnitude entry of each column of ``u`` made positive
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return (u * signs,) + tuple(o * signs for o in others)


@dataclass(frozen=True)
class SpdFactor:
    """Eigendecomposition of a symmetric matrix with an eigenvalue floor.

    ``eigenvalues`` are the raw values, sorted descending; ``clamped`` gives
    them after flooring.
    """

    source: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    floor: float

    @property
    def clamped(self) -> np.ndarray:
        return np.maximum(self.eigenvalues, self.floor)

    @property
    def n_floored(self) -> int:
        return int(np.sum(self.eigenvalues < self.floor))

    def reconstruct(self, clamp: bool = False) -> np.ndarray:
        lam = self.clamped if clamp else self.eigenvalues
        q = self.eigenvectors
        return (q * lam) @ q.T

    def power(self, p: float) -> np.ndarray:
        """Matrix power of the floored matrix, symmetrised."""
        q = self.eigenvectors
        out = (q * self.clamped**p) @ q.T
        return 0.5 * (out + out.T)


def sym_eig(a, floor: float | None = None) -> SpdFactor:
    """Symmetric eigendecomposition, eigenvalues in descending order.

    Eigenvector signs are fixed so that the largest-magnitude entry of each
    column is positive, which makes the output deterministic.
    """
    a = as_matrix(a, "a")
    _check_symmetric(a, "a")
    sym = 0.5 * (a + a.T)
    lam, q = np.linalg.eigh(sym)
    lam, q = lam[::-1].copy(), q[:, ::-1].copy()
    (q,) = _fix_column_signs(q)
    if floor is None:
        floor = default_floor(sym)
    return SpdFactor(source=a, eigenvalues=lam, eigenvectors=q, floor=float(floor))


def spd_inv_sqrt(a, floor: float | None = None) -> np.ndarray:
    """Inverse square root of a symmetric PSD matrix.

    Eigenvalues below ``floor`` are raised to it before inversion, so the
    result satisfies ``B a B = I`` only on the subspace above the floor.
    """
    fac = sym_eig(a, floor)
    top = fac.eigenvalues[0] if fac.eigenvalues.size else 0.0
    if not top > 0:
        raise DegenerateInputError("matrix has no positive eigenvalue")
    if fac.eigenvalues[-1] < -_PSD_RTOL * top:
        raise DegenerateInputError(
            f"matrix is not positive semi-definite (min eigenvalue {fac.eigenvalues[-1]:.3g})"
        )
    if fac.n_floored:
        logger.warning("%d of %d eigenvalues floored at %.3g", fac.n_floored, len(fac.eigenvalues), fac.floor)
    return fac.power(-0.5)


def floor_psd(a, floor: float | None = None) -> np.ndarray:
    """Symmetrise ``a`` and clamp its eigenvalues from below at ``floor``.

    Returns the input (symmetrised) untouched when no clamping is needed.
    """
    a = as_matrix(a, "a")
    sym = 0.5 * (a + a.T)
    fac = sym_eig(sym, floor)
    if fac.n_floored == 0:
        return sym
    return fac.power(1.0)


def psd_sqrt(a) -> np.ndarray:
    """Symmetric square root of a PSD matrix, negative eigenvalues zeroed."""
    fac = sym_eig(a, floor=0.0)
    return fac.power(0.5)


def thin_svd(a):
    """Thin SVD ``a = U diag(s) V^T`` with a deterministic sign convention.

    Returns ``(U, s, V)`` (note: V, not V^T). Singular values are descending
    and the largest-magnitude entry of each column of U is positive.
    """
    a = as_matrix(a, "a")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    u, v = _fix_column_signs(u, vt.T)
    return u, s, v


class Covariances(NamedTuple):
    sxx: np.ndarray
    syy: np.ndarray
    sxy: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray


def cross_covariances(x, y) -> Covariances:
    """Sample means and 1/n-normalised (co)variances of co-indexed rows."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    n = x.shape[0]
    if y.shape[0] != n:
        raise ShapeError(f"x and y must have the same number of rows ({n} != {y.shape[0]})")
    if n < 2:
        raise InsufficientDataError(f"need at least 2 observations, got {n}")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    sxx = xc.T @ xc / n
    syy = yc.T @ yc / n
    sxy = xc.T @ yc / n
    return Covariances(0.5 * (sxx + sxx.T), 0.5 * (syy + syy.T), sxy, mx, my)


class PdSolver:
    """Cholesky-backed solver for a PD matrix, with an eigenvalue-floor fallback.

    The fallback only triggers when Cholesky fails; it accepts matrices whose
    negative eigenvalues are rounding-sized and clamps them at the floor.
    """

    def __init__(self, cov, floor: float | None = None):
        cov = as_matrix(cov, "covariance")
        _check_symmetric(cov, "covariance")
        cov = 0.5 * (cov + cov.T)
        self.dim = cov.shape[0]
        self._chol = None
        self._eig = None
        try:
            self._chol = sla.cho_factor(cov, lower=True, check_finite=False)
            diag = np.diag(self._chol[0])
            if np.any(diag <= 0):
                raise np.linalg.LinAlgError
            self.logdet = 2.0 * float(np.sum(np.log(diag)))
        except (np.linalg.LinAlgError, sla.LinAlgError):
            self._chol = None
            fac = sym_eig(cov, floor)
            top = fac.eigenvalues[0] if self.dim else 0.0
            if not top > 0 or fac.eigenvalues[-1] < -1e-8 * top:
                raise DegenerateCovarianceError("covariance is not positive definite after flooring") from None
            self._eig = (fac.eigenvectors, fac.clamped)
            self.logdet = float(np.sum(np.log(fac.clamped)))

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if self._chol is not None:
            return sla.cho_solve(self._chol, b, check_finite=False)
        q, lam = self._eig
        if b.ndim == 1:
            return q @ ((q.T @ b) / lam)
        return q @ ((q.T @ b) / lam[:, None])

    def inverse(self) -> np.ndarray:
        inv = self.solve(np.eye(self.dim))
        return 0.5 * (inv + inv.T)

    def mahalanobis(self, r) -> np.ndarray | float:
        """Squared Mahalanobis norm ``r^T C^{-1} r``; rows of a 2-D ``r`` are vectors."""
        r = np.asarray(r, dtype=np.float64)
        if r.ndim == 1:
            return float(r @ self.solve(r))
        return np.einsum("ij,ji->i", r, self.solve(r.T))


def gaussian_logpdf(v, mean, cov):
    """Multivariate normal log density.

    ``v`` may be a single vector or an (n, d) array of row vectors; in the
    latter case an array of n log densities is returned.
    """
    v = np.asarray(v, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    cov = as_matrix(cov, "cov")
    d = mean.shape[0]
    if cov.shape != (d, d) or v.shape[-1] != d:
        raise ShapeError(f"dimension mismatch: v {v.shape}, mean {mean.shape}, cov {cov.shape}")
    solver = PdSolver(cov)
    quad = solver.mahalanobis(v - mean)
    return -0.5 * (d * LOG_2PI + solver.logdet + quad)
