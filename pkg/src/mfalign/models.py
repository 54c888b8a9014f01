"""Latent factor models for aligning several embedding spaces.

Two views (inter-battery factor analysis, IBFA) are fitted in closed form
from the SVD of the whitened cross-covariance. Any number of views
(multiple-battery factor analysis, MBFA) are fitted by EM on the
concatenated sample covariance with a block-diagonal noise constraint.

Both models share the generative story

    z ~ N(0, I_k),    x_i | z ~ N(W_i z + mu_i, Psi_i),

and the aligned representation of an observation is the posterior mean
E[z | x_i].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InternalError, ParameterError, ShapeError
from .linalg import (
    FLOOR_SCALE,
    LOG_2PI,
    PdSolver,
    as_matrix,
    cross_covariances,
    floor_psd,
    psd_sqrt,
    spd_inv_sqrt,
    thin_svd,
)

logger = logging.getLogger(__name__)


def _psi_floor(s: np.ndarray) -> float:
    # residual covariances are floored relative to the data scale, not their own
    dim = s.shape[0]
    floor = FLOOR_SCALE * float(np.trace(s)) / max(dim, 1)
    return floor if floor > 0 else np.finfo(np.float64).tiny


def _view_index(view) -> int:
    if view in ("x", 0):
        return 0
    if view in ("y", 1):
        return 1
    raise ParameterError(f"view must be 'x' or 'y', got {view!r}")


def posterior_mean(w: np.ndarray, psi: np.ndarray, mu: np.ndarray, obs) -> np.ndarray:
    """E[z | obs] = (I + W^T Psi^-1 W)^-1 W^T Psi^-1 (obs - mu).

    ``obs`` may be one vector or an (n, d) array of rows.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != w.shape[0]:
        raise ShapeError(f"observation has dimension {obs.shape[-1]}, view expects {w.shape[0]}")
    solver = PdSolver(psi)
    pinv_w = solver.solve(w)
    m = np.eye(w.shape[1]) + w.T @ pinv_w
    centred = obs - mu
    rhs = pinv_w.T @ centred.T
    return np.linalg.solve(m, rhs).T


# ---------------------------------------------------------------------------
# IBFA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IbfaModel:
    """Fitted two-view factor model.

    ``p`` holds the canonical correlations and ``ux``/``uy`` the whitened
    directions ``S_ii^{-1/2} V_i``; loadings satisfy ``W_i = S_ii U_i P^{1/2}``.
    """

    k: int
    wx: np.ndarray
    wy: np.ndarray
    mu_x: np.ndarray
    mu_y: np.ndarray
    psi_x: np.ndarray
    psi_y: np.ndarray
    p: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    n_obs: int = 0

    @property
    def dims(self) -> tuple[int, int]:
        return self.wx.shape[0], self.wy.shape[0]

    def view(self, view):
        """(W, mu, Psi, U) for view 'x' or 'y'."""
        if _view_index(view) == 0:
            return self.wx, self.mu_x, self.psi_x, self.ux
        return self.wy, self.mu_y, self.psi_y, self.uy

    def swapped(self) -> "IbfaModel":
        return replace(
            self, wx=self.wy, wy=self.wx, mu_x=self.mu_y, mu_y=self.mu_x,
            psi_x=self.psi_y, psi_y=self.psi_x, ux=self.uy, uy=self.ux,
        )

    def joint_mean(self) -> np.ndarray:
        return np.concatenate([self.mu_x, self.mu_y])

    def joint_covariance(self) -> np.ndarray:
        w = np.vstack([self.wx, self.wy])
        cov = w @ w.T
        dx = self.wx.shape[0]
        cov[:dx, :dx] += self.psi_x
        cov[dx:, dx:] += self.psi_y
        return 0.5 * (cov + cov.T)


def fit_ibfa(x, y, k: int | None = None) -> IbfaModel:
    """Closed-form maximum-likelihood IBFA fit on co-indexed rows of x and y.

    ``k`` defaults to ``min(d, d')``. Rank-deficient covariances (fewer
    pairs than dimensions) are handled by flooring their eigenvalues.
    """
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    cov = cross_covariances(x, y)
    n, dx = x.shape
    dy = y.shape[1]
    if k is None:
        k = min(dx, dy)
    if not 1 <= k <= min(dx, dy):
        raise ParameterError(f"latent dimension k={k} must lie in [1, {min(dx, dy)}]")
    if n < max(dx, dy):
        logger.warning("only %d pairs for dimensions (%d, %d); covariances are rank deficient", n, dx, dy)

    wx_inv = spd_inv_sqrt(cov.sxx)
    wy_inv = spd_inv_sqrt(cov.syy)
    vx, s, vy = thin_svd(wx_inv @ cov.sxy @ wy_inv)
    p = s[:k].copy()
    ux = wx_inv @ vx[:, :k]
    uy = wy_inv @ vy[:, :k]
    root_p = np.sqrt(p)
    wx = (cov.sxx @ ux) * root_p
    wy = (cov.syy @ uy) * root_p
    psi_x = floor_psd(cov.sxx - wx @ wx.T, _psi_floor(cov.sxx))
    psi_y = floor_psd(cov.syy - wy @ wy.T, _psi_floor(cov.syy))
    return IbfaModel(
        k=k, wx=wx, wy=wy, mu_x=cov.mean_x, mu_y=cov.mean_y,
        psi_x=psi_x, psi_y=psi_y, p=p, ux=ux, uy=uy, n_obs=n,
    )


def project(model: IbfaModel, view, obs, form: str = "reduced") -> np.ndarray:
    """Posterior mean of the latent variable given one view.

    ``form="reduced"`` uses ``P^{1/2} U^T (obs - mu)``, exact at the
    closed-form optimum; ``form="full"`` evaluates the general expression.
    """
    w, mu, psi, u = model.view(view)
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ShapeError("project expects a single vector; use batch_project for matrices")
    if obs.shape[0] != w.shape[0]:
        raise ShapeError(f"observation has dimension {obs.shape[0]}, view expects {w.shape[0]}")
    if form == "reduced":
        return np.sqrt(model.p) * (u.T @ (obs - mu))
    if form == "full":
        return posterior_mean(w, psi, mu, obs)
    raise ParameterError(f"unknown projection form {form!r}")


def batch_project(model: IbfaModel, view, obs_matrix, form: str = "reduced") -> np.ndarray:
    w, mu, psi, u = model.view(view)
    obs = as_matrix(obs_matrix, "obs_matrix")
    if obs.shape[1] != w.shape[0]:
        raise ShapeError(f"observations have dimension {obs.shape[1]}, view expects {w.shape[0]}")
    if form == "reduced":
        return ((obs - mu) @ u) * np.sqrt(model.p)
    if form == "full":
        return posterior_mean(w, psi, mu, obs)
    raise ParameterError(f"unknown projection form {form!r}")


@dataclass(frozen=True)
class LikelihoodTerms:
    """Joint log density split into scaled reconstruction errors.

    ``l_y_given_x`` penalises reconstructing y from E[z|x]; ``l_x``
    penalises reconstructing x from the same projection; ``c_per_sample`` is
    the log-determinant constant. Fields are arrays when evaluated on rows.
    """

    l_y_given_x: float | np.ndarray
    l_x: float | np.ndarray
    c_per_sample: float
    total: float | np.ndarray


def joint_log_likelihood(model: IbfaModel, x, y) -> LikelihoodTerms:
    """log p(x, y) via p(x) p(y | x), written as reconstruction errors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx, dy = model.dims
    if x.shape[-1] != dx or y.shape[-1] != dy or x.shape[:-1] != y.shape[:-1]:
        raise ShapeError(f"expected x of dimension {dx} and y of dimension {dy}")
    wx, wy = model.wx, model.wy
    sigma_x = wx @ wx.T + model.psi_x
    sigma_y = wy @ wy.T + model.psi_y
    sol_x = PdSolver(0.5 * (sigma_x + sigma_x.T))
    g = sol_x.solve(wx)  # Sigma_x^-1 W_x
    xt = x - model.mu_x
    yt = y - model.mu_y
    ez = xt @ g

    sigma_ygx = sigma_y - wy @ (wx.T @ g) @ wy.T
    sol_ygx = PdSolver(0.5 * (sigma_ygx + sigma_ygx.T))
    l_ygx = -0.5 * sol_ygx.mahalanobis(yt - ez @ wy.T)

    a = model.psi_x @ sol_x.solve(model.psi_x)
    sol_a = PdSolver(0.5 * (a + a.T))
    l_x = -0.5 * sol_a.mahalanobis(xt - ez @ wx.T)

    c = -0.5 * ((dx + dy) * LOG_2PI + sol_ygx.logdet + sol_x.logdet)
    return LikelihoodTerms(l_y_given_x=l_ygx, l_x=l_x, c_per_sample=float(c), total=l_ygx + l_x + c)


def dataset_log_likelihood(model: IbfaModel, x, y) -> float:
    """Sum of joint log densities over co-indexed rows."""
    terms = joint_log_likelihood(model, as_matrix(x, "x"), as_matrix(y, "y"))
    return float(np.sum(terms.total))


def sample_pairs(model: IbfaModel, count: int, seed: int):
    """Draw ``count`` (x, y) pairs from the generative model.

    Uses numpy's PCG64 generator, so streams are identical across platforms.
    """
    if count < 0:
        raise ParameterError("count must be non-negative")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, model.k))
    dx, dy = model.dims
    ex = rng.standard_normal((count, dx)) @ psd_sqrt(model.psi_x)
    ey = rng.standard_normal((count, dy)) @ psd_sqrt(model.psi_y)
    x = z @ model.wx.T + model.mu_x + ex
    y = z @ model.wy.T + model.mu_y + ey
    return x, y


def sample_pair(model: IbfaModel, seed: int):
    x, y = sample_pairs(model, 1, seed)
    return x[0], y[0]


# ---------------------------------------------------------------------------
# MBFA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MbfaModel:
    k: int
    w: tuple
    mu: tuple
    psi: tuple
    nll_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations_run: int = 0
    init: str = ""

    @property
    def v(self) -> int:
        return len(self.w)

    @property
    def dims(self) -> tuple:
        return tuple(w.shape[0] for w in self.w)

    @property
    def stacked_w(self) -> np.ndarray:
        return np.vstack(self.w)

    def joint_mean(self) -> np.ndarray:
        return np.concatenate(self.mu)

    def joint_covariance(self) -> np.ndarray:
        w = self.stacked_w
        cov = w @ w.T
        off = 0
        for p in self.psi:
            d = p.shape[0]
            cov[off:off + d, off:off + d] += p
            off += d
        return 0.5 * (cov + cov.T)

    @classmethod
    def from_ibfa(cls, model: IbfaModel) -> "MbfaModel":
        return cls(
            k=model.k, w=(model.wx, model.wy), mu=(model.mu_x, model.mu_y),
            psi=(model.psi_x, model.psi_y), init="ibfa-closed-form",
        )


def concat_covariance(views: Sequence, means: Sequence | None = None) -> np.ndarray:
    """1/n covariance of the concatenated views, centred at ``means``."""
    data = np.hstack([as_matrix(v, "view") for v in views])
    mean = data.mean(axis=0) if means is None else np.concatenate(means)
    c = data - mean
    s = c.T @ c / data.shape[0]
    return 0.5 * (s + s.T)


def mbfa_nll(model: MbfaModel, s) -> float:
    """Average negative log-likelihood per sample given the covariance ``s``
    of the data around the model means: (1/2)(log|2 pi Sigma| + tr(Sigma^-1 S)).
    """
    s = as_matrix(s, "S")
    dim = sum(model.dims)
    if s.shape != (dim, dim):
        raise ShapeError(f"S must be {dim}x{dim}, got {s.shape}")
    solver = PdSolver(model.joint_covariance())
    return 0.5 * (dim * LOG_2PI + solver.logdet + float(np.trace(solver.solve(s))))


def _blocks(dims):
    off = 0
    out = []
    for d in dims:
        out.append(slice(off, off + d))
        off += d
    return out


def _orthogonal_align(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # orthogonal R minimising ||a R - b||_F
    u, _, v = thin_svd(a.T @ b)
    return u @ v.T


def _init_random(s, blocks, k, seed):
    rng = np.random.default_rng(seed)
    dim = s.shape[0]
    q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
    w = q * np.sqrt(np.trace(s) / dim)
    psi = [np.diag(np.diag(s[b, b])) / 2.0 for b in blocks]
    return w, psi


def _init_from_ibfa(views, s, blocks, k):
    ref = fit_ibfa(views[0], views[1], k)
    ws = [ref.wx, ref.wy]
    for j in range(2, len(views)):
        pair = fit_ibfa(views[0], views[j], k)
        rot = _orthogonal_align(pair.wx, ref.wx)
        ws.append(pair.wy @ rot)
    psi = [floor_psd(s[b, b] - w @ w.T, _psi_floor(s[b, b])) for b, w in zip(blocks, ws)]
    return np.vstack(ws), psi


def _init_pca(s, k):
    lam, q = np.linalg.eigh(s)
    lam, q = lam[::-1][:k], q[:, ::-1][:, :k]
    w = q * np.sqrt(np.maximum(lam / 2.0, _psi_floor(s)))
    return w, [np.diag(np.diag(s)) / 2.0]


def _em_stats(w, psi, s, blocks):
    """M, B and the average NLL at (w, psi) via Woodbury identities."""
    solvers = [PdSolver(p) for p in psi]
    pinv_w = np.vstack([sol.solve(w[b]) for sol, b in zip(solvers, blocks)])
    k = w.shape[1]
    m = np.linalg.inv(np.eye(k) + w.T @ pinv_w)
    m = 0.5 * (m + m.T)
    b_mat = m @ pinv_w.T
    logdet_psi = sum(sol.logdet for sol in solvers)
    sign, logdet_m = np.linalg.slogdet(m)
    tr_psi_s = sum(float(np.trace(sol.solve(s[b, b]))) for sol, b in zip(solvers, blocks))
    tr_sigma_s = tr_psi_s - float(np.trace(b_mat @ s @ pinv_w))
    nll = 0.5 * (s.shape[0] * LOG_2PI + logdet_psi - logdet_m + tr_sigma_s)
    return m, b_mat, nll


def _psd_block(block, floor, diagonal):
    block = 0.5 * (block + block.T)
    if diagonal:
        block = np.diag(np.diag(block))
    try:
        np.linalg.cholesky(block)
        return block, False
    except np.linalg.LinAlgError:
        return floor_psd(block, floor), True


def _em_update(m, b_mat, s, blocks, floors, diagonal):
    sb = s @ b_mat.T
    w_new = sb @ np.linalg.inv(m + b_mat @ sb)
    psi_full = s - sb @ w_new.T
    floored = False
    psi_new = []
    for b, fl in zip(blocks, floors):
        block, was_floored = _psd_block(psi_full[b, b], fl, diagonal)
        floored |= was_floored
        psi_new.append(block)
    return w_new, psi_new, floored


def em_step(w, psi: Sequence, s, diagonal_psi: bool = False):
    """One EM update of stacked loadings ``w`` and noise blocks ``psi``.

    ``s`` is the covariance of the concatenated, centred views. Returns the
    new ``(w, psi_blocks)``.
    """
    w = as_matrix(w, "w")
    s = as_matrix(s, "S")
    blocks = _blocks([p.shape[0] for p in psi])
    if w.shape[0] != s.shape[0] or blocks[-1].stop != s.shape[0]:
        raise ShapeError("loadings, noise blocks and S disagree in dimension")
    m, b_mat, _ = _em_stats(w, list(psi), s, blocks)
    floors = [_psi_floor(s[b, b]) for b in blocks]
    w_new, psi_new, _ = _em_update(m, b_mat, s, blocks, floors, diagonal_psi)
    return w_new, psi_new


def fit_mbfa(
    views: Sequence,
    k: int | None = None,
    max_iters: int = 20000,
    rel_tol: float = 1e-8,
    init: str = "ibfa",
    seed: int = 0,
    diagonal_psi: bool = False,
) -> MbfaModel:
    """Fit a v-view factor model by EM on the concatenated covariance.

    Parameters
    ----------
    views : sequence of (n, d_i) arrays
        Co-indexed observations, one array per view.
    k : int, optional
        Latent dimension; defaults to the smallest view dimension.
    max_iters, rel_tol : stopping rule
        EM stops after ``max_iters`` updates or once the NLL improves by less
        than ``rel_tol * max(|NLL|, 1)`` in one update.
    init : {"ibfa", "random"}
        "ibfa" chains closed-form two-view fits of view 1 against every
        other view, rotated into a common latent basis; "random" draws
        orthonormal loadings with ``seed``.
    diagonal_psi : bool
        Restrict each noise block to a diagonal matrix.

    Returns
    -------
    MbfaModel
        With ``nll_trace[0]`` the NLL at initialisation and one entry per update.
    """
    views = [as_matrix(v, f"view {i}") for i, v in enumerate(views)]
    if not views:
        raise ShapeError("at least one view is required")
    n = views[0].shape[0]
    if any(v.shape[0] != n for v in views):
        raise ShapeError("views are not co-indexed: row counts differ " + str([v.shape[0] for v in views]))
    if n < 2:
        raise ParameterError("need at least 2 observations")
    dims = [v.shape[1] for v in views]
    total_dim = sum(dims)
    if k is None:
        k = min(dims)
    if not 1 <= k <= total_dim:
        raise ParameterError(f"latent dimension k={k} must lie in [1, {total_dim}]")
    if max_iters < 0:
        raise ParameterError("max_iters must be non-negative")

    means = [v.mean(axis=0) for v in views]
    s = concat_covariance(views, means)
    blocks = _blocks(dims)
    floors = [_psi_floor(s[b, b]) for b in blocks]

    if len(views) == 1:
        w, psi = _init_pca(s, k)
        init = "pca"
    elif init == "ibfa" and k > min(dims):
        logger.warning("k=%d exceeds a view dimension; falling back to random initialisation", k)
        init = "random"
    if init == "ibfa":
        w, psi = _init_from_ibfa(views, s, blocks, k)
    elif init == "random":
        w, psi = _init_random(s, blocks, k, seed)
    elif init != "pca":
        raise ParameterError(f"unknown initialisation {init!r}")
    if diagonal_psi:
        psi = [np.diag(np.diag(p)) for p in psi]

    m, b_mat, nll = _em_stats(w, psi, s, blocks)
    trace = [nll]
    iters = 0
    for _ in range(max_iters):
        w, psi, floored = _em_update(m, b_mat, s, blocks, floors, diagonal_psi)
        m, b_mat, nll_new = _em_stats(w, psi, s, blocks)
        iters += 1
        prev = trace[-1]
        trace.append(nll_new)
        if nll_new > prev + max(1e-9, 1e-12 * abs(prev)):
            if floored:
                logger.warning("NLL rose by %.3g after flooring a noise block", nll_new - prev)
            else:
                raise InternalError(f"EM increased the NLL at iteration {iters}: {prev!r} -> {nll_new!r}")
        if prev - nll_new < rel_tol * max(abs(prev), 1.0):
            break

    return MbfaModel(
        k=k,
        w=tuple(w[b].copy() for b in blocks),
        mu=tuple(means),
        psi=tuple(psi),
        nll_trace=np.asarray(trace),
        iterations_run=iters,
        init=init,
    )


def project_mbfa(model: MbfaModel, view_index: int, obs) -> np.ndarray:
    """Posterior latent mean from one view; accepts a vector or rows."""
    if not 0 <= view_index < model.v:
        raise ParameterError(f"view index {view_index} out of range for {model.v} views")
    return posterior_mean(model.w[view_index], model.psi[view_index], model.mu[view_index], obs)
