import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfalign.errors import ParameterError, ShapeError
from mfalign.linalg import gaussian_logpdf
from mfalign.models import (
    MbfaModel,
    batch_project,
    concat_covariance,
    em_step,
    fit_ibfa,
    fit_mbfa,
    mbfa_nll,
    project_mbfa,
)

from conftest import planted_views, random_spd


def procrustes_residual(a, b):
    # min over orthogonal R of ||a R - b|| / ||b||
    u, _, vt = np.linalg.svd(a.T @ b)
    return np.linalg.norm(a @ u @ vt - b) / np.linalg.norm(b)


class TestEmStep:
    def test_population_fixed_point(self, rng):
        dims = [3, 4, 2]
        w = rng.standard_normal((9, 2))
        psis = [random_spd(rng, d) for d in dims]
        s = w @ w.T
        off = 0
        for p in psis:
            s[off:off + p.shape[0], off:off + p.shape[0]] += p
            off += p.shape[0]
        w1, psi1 = em_step(w, psis, s)
        model = MbfaModel(k=2, w=(w1[:3], w1[3:7], w1[7:]), mu=(np.zeros(3), np.zeros(4), np.zeros(2)), psi=tuple(psi1))
        assert np.max(np.abs(model.joint_covariance() - s)) < 1e-8

    def test_shape_error(self, rng):
        with pytest.raises(ShapeError):
            em_step(np.zeros((4, 1)), [np.eye(2), np.eye(1)], np.eye(4))


class TestNll:
    def test_trivial_model(self):
        d = 5
        m = MbfaModel(k=1, w=(np.zeros((2, 1)), np.zeros((3, 1))), mu=(np.zeros(2), np.zeros(3)), psi=(np.eye(2), np.eye(3)))
        assert mbfa_nll(m, np.eye(d)) == pytest.approx(0.5 * d * (math.log(2 * math.pi) + 1), abs=1e-12)

    def test_matches_rowwise_density(self, rng):
        views, _, _ = planted_views(rng, [3, 2], 1, 400)
        m = fit_mbfa(views, 1, max_iters=50)
        data = np.hstack(views)
        s = concat_covariance(views, m.mu)
        rows = gaussian_logpdf(data, m.joint_mean(), m.joint_covariance())
        assert mbfa_nll(m, s) == pytest.approx(-rows.mean(), abs=1e-8)
        # the EM trace uses a Woodbury evaluation of the same quantity
        assert m.nll_trace[-1] == pytest.approx(mbfa_nll(m, s), abs=1e-8)

    def test_shape(self):
        m = MbfaModel(k=1, w=(np.zeros((2, 1)),), mu=(np.zeros(2),), psi=(np.eye(2),))
        with pytest.raises(ShapeError):
            mbfa_nll(m, np.eye(3))


class TestFitMbfa:
    def test_two_views_match_ibfa(self):
        rng = np.random.default_rng(31)
        views, _, _ = planted_views(rng, [4, 4], 2, 3000)
        ibfa = MbfaModel.from_ibfa(fit_ibfa(views[0], views[1], 2))
        s = concat_covariance(views)
        m = fit_mbfa(views, 2, max_iters=5000, rel_tol=1e-12, init="random", seed=1)
        assert abs(m.nll_trace[-1] - mbfa_nll(ibfa, s)) < 1e-3
        assert np.all(np.diff(m.nll_trace) <= 1e-9)

    def test_ibfa_init_already_optimal(self):
        rng = np.random.default_rng(32)
        views, _, _ = planted_views(rng, [3, 5], 2, 1000)
        m = fit_mbfa(views, 2, max_iters=100)
        assert m.init == "ibfa"
        assert m.nll_trace[0] - m.nll_trace[-1] < 1e-6

    def test_three_view_recovery(self):
        rng = np.random.default_rng(33)
        views, ws, _ = planted_views(rng, [6, 6, 6], 2, 50000)
        m = fit_mbfa(views, 2, max_iters=2000)
        for i in range(3):
            for j in range(i + 1, 3):
                target = ws[i] @ ws[j].T
                err = np.linalg.norm(m.w[i] @ m.w[j].T - target) / np.linalg.norm(target)
                assert err < 0.05

    def test_early_stop_close_to_converged(self):
        rng = np.random.default_rng(34)
        views, _, _ = planted_views(rng, [4, 3, 3], 2, 2000)
        short = fit_mbfa(views, 2, max_iters=1000, rel_tol=0.0)
        long = fit_mbfa(views, 2, max_iters=20000)
        assert short.nll_trace[-1] - long.nll_trace[-1] < 1e-2

    def test_rotation_identifiability(self):
        rng = np.random.default_rng(35)
        views, _, _ = planted_views(rng, [8, 8], 2, 3000)
        a = fit_mbfa(views, 2, init="random", seed=1, rel_tol=1e-12, max_iters=20000)
        b = fit_mbfa(views, 2, init="random", seed=2, rel_tol=1e-12, max_iters=20000)
        assert procrustes_residual(a.stacked_w, b.stacked_w) < 1e-2

    def test_projections_match_ibfa_up_to_rotation(self):
        rng = np.random.default_rng(36)
        views, _, _ = planted_views(rng, [8, 8], 2, 3000)
        ibfa = fit_ibfa(views[0], views[1], 2)
        m = fit_mbfa(views, 2, init="random", seed=3, rel_tol=1e-12, max_iters=20000)
        probe = rng.standard_normal((200, 8)) + m.mu[0]
        assert procrustes_residual(project_mbfa(m, 0, probe), batch_project(ibfa, "x", probe, "full")) < 1e-2

    def test_two_view_scale_freedom(self):
        # with full noise blocks, W_x A and W_y A^-T give the same likelihood
        # whenever both residual blocks stay positive definite
        rng = np.random.default_rng(37)
        views, _, _ = planted_views(rng, [4, 4], 2, 3000)
        ibfa = fit_ibfa(views[0], views[1], 2)
        s = concat_covariance(views)
        a = np.diag([1.01, 0.995])
        wx, wy = ibfa.wx @ a, ibfa.wy @ np.linalg.inv(a).T
        s_x, s_y = s[:4, :4], s[4:, 4:]
        other = MbfaModel(k=2, w=(wx, wy), mu=(ibfa.mu_x, ibfa.mu_y), psi=(s_x - wx @ wx.T, s_y - wy @ wy.T))
        assert np.linalg.eigvalsh(other.psi[0]).min() > 0 and np.linalg.eigvalsh(other.psi[1]).min() > 0
        assert mbfa_nll(other, s) == pytest.approx(mbfa_nll(MbfaModel.from_ibfa(ibfa), s), abs=1e-9)
        assert procrustes_residual(other.stacked_w, np.vstack([ibfa.wx, ibfa.wy])) > 1e-3

    def test_three_view_rotation_identifiability(self):
        rng = np.random.default_rng(38)
        views, _, _ = planted_views(rng, [4, 4, 4], 2, 3000)
        a = fit_mbfa(views, 2, init="random", seed=1, rel_tol=0.0, max_iters=5000)
        b = fit_mbfa(views, 2, init="random", seed=2, rel_tol=0.0, max_iters=5000)
        assert procrustes_residual(a.stacked_w, b.stacked_w) < 1e-6

    def test_diagonal_psi(self, rng):
        views, _, _ = planted_views(rng, [3, 3], 1, 500)
        m = fit_mbfa(views, 1, max_iters=200, diagonal_psi=True)
        for p in m.psi:
            assert not np.any(p - np.diag(np.diag(p)))

    def test_single_view(self, rng):
        views, _, _ = planted_views(rng, [5], 2, 500)
        m = fit_mbfa(views, 2, max_iters=500)
        assert m.init == "pca" and m.v == 1
        assert np.all(np.diff(m.nll_trace) <= 1e-9)

    def test_k_above_view_dim_uses_random(self, rng, caplog):
        views, _, _ = planted_views(rng, [2, 3], 1, 300)
        m = fit_mbfa(views, 3, max_iters=20)
        assert m.init == "random"

    def test_errors(self, rng):
        with pytest.raises(ShapeError):
            fit_mbfa([rng.standard_normal((10, 2)), rng.standard_normal((9, 2))])
        with pytest.raises(ShapeError):
            fit_mbfa([])
        with pytest.raises(ParameterError):
            fit_mbfa([rng.standard_normal((10, 2))] * 2, k=0)
        with pytest.raises(ParameterError):
            fit_mbfa([rng.standard_normal((10, 2))] * 2, init="bogus")

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), v=st.integers(2, 4))
    def test_monotone_trace(self, seed, v):
        rng = np.random.default_rng(seed)
        dims = [int(d) for d in rng.integers(2, 5, size=v)]
        views, _, _ = planted_views(rng, dims, 1, 200)
        m = fit_mbfa(views, 1, max_iters=300, init="random", seed=seed)
        assert m.iterations_run == len(m.nll_trace) - 1
        assert np.all(np.diff(m.nll_trace) <= 1e-9 + 1e-12 * np.abs(m.nll_trace[:-1]))


class TestProjectMbfa:
    def test_mean_maps_to_origin(self, rng):
        views, _, _ = planted_views(rng, [3, 4, 2], 2, 500)
        m = fit_mbfa(views, 2, max_iters=100)
        for i in range(3):
            assert np.all(np.abs(project_mbfa(m, i, m.mu[i])) < 1e-12)

    def test_conditioning_oracle(self, rng):
        views, _, _ = planted_views(rng, [3, 4, 2], 2, 500)
        m = fit_mbfa(views, 2, max_iters=100)
        # E[z | x_1] from the joint Gaussian over all views and the latent
        dim = sum(m.dims)
        w = m.stacked_w
        joint = np.zeros((dim + 2, dim + 2))
        joint[:dim, :dim] = m.joint_covariance()
        joint[:dim, dim:] = w
        joint[dim:, :dim] = w.T
        joint[dim:, dim:] = np.eye(2)
        idx = list(range(3, 7))
        for _ in range(10):
            obs = rng.standard_normal(4) * 2
            expect = joint[dim:, idx] @ np.linalg.solve(joint[np.ix_(idx, idx)], obs - m.mu[1])
            np.testing.assert_allclose(project_mbfa(m, 1, obs), expect, atol=1e-8)

    def test_bad_index(self, rng):
        views, _, _ = planted_views(rng, [2, 2], 1, 50)
        m = fit_mbfa(views, 1, max_iters=5)
        with pytest.raises(ParameterError):
            project_mbfa(m, 2, np.zeros(2))
