import numpy as np
import pytest

from mfalign.models import IbfaModel

_ACCEPTANCE_LINES = []


def random_spd(rng, d, floor=0.1):
    b = rng.standard_normal((d, d))
    return b @ b.T / d + floor * np.eye(d)


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def planted_ibfa(rng, dx, dy, k, noise=0.5):
    """Ground-truth model with generic loadings and full noise covariances.

    Only W, mu, Psi are meaningful; p and the U matrices are zero.
    """
    wx = rng.standard_normal((dx, k))
    wy = rng.standard_normal((dy, k))
    return IbfaModel(
        k=k, wx=wx, wy=wy, mu_x=rng.standard_normal(dx), mu_y=rng.standard_normal(dy),
        psi_x=noise * random_spd(rng, dx), psi_y=noise * random_spd(rng, dy),
        p=np.zeros(k), ux=np.zeros((dx, k)), uy=np.zeros((dy, k)),
    )


def planted_views(rng, dims, k, n, noise=0.5):
    """n co-indexed samples from a v-view factor model; returns (views, W list, Psi list)."""
    ws = [rng.standard_normal((d, k)) for d in dims]
    psis = [noise * random_spd(rng, d) for d in dims]
    z = rng.standard_normal((n, k))
    views = []
    for w, psi in zip(ws, psis):
        e = rng.standard_normal((n, w.shape[0])) @ np.linalg.cholesky(psi).T
        views.append(z @ w.T + e + rng.standard_normal(w.shape[0]))
    return views, ws, psis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_log():
    def record(name, passed, detail=""):
        # passed=None marks a criterion that was not run
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        _ACCEPTANCE_LINES.append(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
