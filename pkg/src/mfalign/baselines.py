"""Direct-mapping baselines: least squares, orthogonal Procrustes and CCA."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .linalg import PdSolver, as_matrix, cross_covariances, spd_inv_sqrt, sym_eig, thin_svd

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearMap:
    """y ~ W x + mu. ``mu`` is None for maps fitted on uncentred data."""

    w: np.ndarray
    mu: np.ndarray | None
    kind: str

    def apply(self, x) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64) @ self.w.T
        return out if self.mu is None else out + self.mu


def _check_pairs(x, y):
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"x and y must have the same number of rows ({x.shape[0]} != {y.shape[0]})")
    if x.shape[0] < 2:
        raise ParameterError("need at least 2 pairs")
    return x, y


def fit_least_squares(x, y, noise_cov=None) -> LinearMap:
    """Unconstrained linear map from centred x to centred y.

    Solves ``W G = C`` with ``G = sum x x^T`` and ``C = sum y x^T``. When
    ``noise_cov`` is given the Psi-weighted problem
    ``min sum (y - W x)^T Psi^-1 (y - W x)`` is solved instead, through its
    Kronecker-form normal equations; the minimiser is the same W. The
    Kronecker system has (d*d')^2 entries, so the weighted path is meant for
    small problems.
    """
    x, y = _check_pairs(x, y)
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    gram = xc.T @ xc
    cross = yc.T @ xc

    fac = sym_eig(0.5 * (gram + gram.T))
    if fac.n_floored:
        logger.warning("Gram matrix is singular; %d eigenvalues floored", fac.n_floored)
    if noise_cov is None:
        w = cross @ fac.power(-1.0)
    else:
        psi = as_matrix(noise_cov, "noise_cov")
        dy, dx = cross.shape
        if psi.shape != (dy, dy):
            raise ShapeError(f"noise_cov must be {dy}x{dy}")
        if dx * dy > 4096:
            raise ParameterError("noise-weighted least squares is limited to d*d' <= 4096")
        psi_inv = PdSolver(psi).inverse()
        # row-major vec: vec(Psi^-1 W G) = (Psi^-1 kron G) vec(W)
        system = np.kron(psi_inv, fac.reconstruct(clamp=True))
        rhs = (psi_inv @ cross).ravel()
        w = np.linalg.solve(system, rhs).reshape(dy, dx)
    return LinearMap(w=w, mu=my - w @ mx, kind="least-squares")


def fit_procrustes(x, y) -> LinearMap:
    """Orthogonal W minimising ||X W^T - Y||_F, fitted on uncentred vectors."""
    x, y = _check_pairs(x, y)
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"Procrustes needs equal dimensions, got {x.shape[1]} and {y.shape[1]}")
    u, _, v = thin_svd(y.T @ x)
    return LinearMap(w=u @ v.T, mu=None, kind="procrustes")


@dataclass(frozen=True)
class CcaModel:
    ax: np.ndarray
    ay: np.ndarray
    mu_x: np.ndarray
    mu_y: np.ndarray
    correlations: np.ndarray

    def project(self, view, obs) -> np.ndarray:
        if view in ("x", 0):
            return (np.asarray(obs, dtype=np.float64) - self.mu_x) @ self.ax
        if view in ("y", 1):
            return (np.asarray(obs, dtype=np.float64) - self.mu_y) @ self.ay
        raise ParameterError(f"view must be 'x' or 'y', got {view!r}")


def fit_cca(x, y, k: int | None = None) -> CcaModel:
    """Classical CCA from the SVD of the whitened cross-covariance."""
    x, y = _check_pairs(x, y)
    dx, dy = x.shape[1], y.shape[1]
    if k is None:
        k = min(dx, dy)
    if not 1 <= k <= min(dx, dy):
        raise ParameterError(f"k={k} must lie in [1, {min(dx, dy)}]")
    if x.shape[0] <= max(dx, dy):
        logger.warning("CCA with %d pairs for dimensions (%d, %d) is ill-posed", x.shape[0], dx, dy)
    cov = cross_covariances(x, y)
    ix = spd_inv_sqrt(cov.sxx)
    iy = spd_inv_sqrt(cov.syy)
    vx, s, vy = thin_svd(ix @ cov.sxy @ iy)
    return CcaModel(
        ax=ix @ vx[:, :k], ay=iy @ vy[:, :k],
        mu_x=cov.mean_x, mu_y=cov.mean_y, correlations=s[:k].copy(),
    )
