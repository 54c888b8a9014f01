"""Planted-model benchmarks.

A planted model is a ground-truth two-view factor model. Training and test
pairs are drawn from it, every alignment method is fitted on the training
pairs, and test words are translated by retrieving the partner of each test
x among all test y.

The planted views are related by a rotation (``W_y = Q W_x``,
``mu_y = Q mu_x``), so without noise ``y = Q x`` exactly and every method,
Procrustes included, can reach perfect precision. Noise covariances are
random rotations of a log-spaced spectrum whose largest/smallest ratio is
``condition``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .baselines import fit_cca, fit_least_squares, fit_procrustes
from .errors import ParameterError
from .models import (
    IbfaModel,
    MbfaModel,
    batch_project,
    concat_covariance,
    fit_ibfa,
    fit_mbfa,
    mbfa_nll,
    project_mbfa,
    sample_pairs,
)
from .retrieval import RetrievalIndex, precision_at_k, retrieve

METHODS = ("ibfa", "mbfa", "lsq", "procrustes", "cca")
NOISE_KINDS = ("none", "isotropic", "anisotropic")


@dataclass(frozen=True)
class Scenario:
    d: int = 16
    k: int = 8
    n_train: int = 2000
    n_test: int = 500
    noise: str = "anisotropic"
    noise_scale: float = 1.0
    condition: float = 100.0
    seed: int = 0
    mbfa_iters: int = 1000
    metric: str = "nn"
    neighborhood: int = 10
    methods: tuple = METHODS


def _random_orthogonal(rng, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _noise_cov(rng, d: int, scenario: Scenario) -> np.ndarray:
    if scenario.noise == "none":
        return np.zeros((d, d))
    if scenario.noise == "isotropic":
        return scenario.noise_scale * np.eye(d)
    spectrum = scenario.noise_scale * np.logspace(-np.log10(scenario.condition), 0.0, d)
    rot = _random_orthogonal(rng, d)
    cov = (rot * spectrum) @ rot.T
    return 0.5 * (cov + cov.T)


def planted_model(scenario: Scenario, rng) -> IbfaModel:
    """Ground-truth model; its ``p``/``ux``/``uy`` fields are unused zeros."""
    d, k = scenario.d, scenario.k
    if not 1 <= k <= d:
        raise ParameterError(f"planted k={k} must lie in [1, {d}]")
    if scenario.noise not in NOISE_KINDS:
        raise ParameterError(f"noise must be one of {NOISE_KINDS}")
    wx = rng.standard_normal((d, k)) / np.sqrt(k)
    mu_x = rng.standard_normal(d)
    rot = _random_orthogonal(rng, d)
    zeros = np.zeros((d, k))
    return IbfaModel(
        k=k, wx=wx, wy=rot @ wx, mu_x=mu_x, mu_y=rot @ mu_x,
        psi_x=_noise_cov(rng, d, scenario), psi_y=_noise_cov(rng, d, scenario),
        p=np.zeros(k), ux=zeros, uy=zeros.copy(),
    )


def _rel_err(est: np.ndarray, true: np.ndarray) -> float:
    return float(np.linalg.norm(est - true) / np.linalg.norm(true))


def _precisions(qx: np.ndarray, ty: np.ndarray, scenario: Scenario) -> dict:
    index = RetrievalIndex(ty)
    topk = min(10, len(index))
    ids = retrieve(index, qx, topk, scenario.metric, min(scenario.neighborhood, len(index)))
    ranked = {i: list(row) for i, row in enumerate(ids)}
    gold = {i: {i} for i in range(qx.shape[0])}
    return precision_at_k(ranked, gold).precision_at


def run_scenario(scenario: Scenario) -> list[dict]:
    """Fit every method on planted data and score it. One dict per method."""
    seeds = np.random.SeedSequence(scenario.seed).spawn(3)
    truth = planted_model(scenario, np.random.default_rng(seeds[0]))
    x, y = sample_pairs(truth, scenario.n_train, int(seeds[1].generate_state(1)[0]))
    tx, ty = sample_pairs(truth, scenario.n_test, int(seeds[2].generate_state(1)[0]))
    true_cross = truth.wx @ truth.wy.T
    s_train = concat_covariance([x, y])

    rows = []
    for method in scenario.methods:
        row = {"method": method, "cross_cov_rel_err": None, "train_nll": None}
        if method == "ibfa":
            model = fit_ibfa(x, y, scenario.k)
            qx, qy = batch_project(model, "x", tx), batch_project(model, "y", ty)
            row["cross_cov_rel_err"] = _rel_err(model.wx @ model.wy.T, true_cross)
            row["train_nll"] = mbfa_nll(MbfaModel.from_ibfa(model), s_train)
        elif method == "mbfa":
            model = fit_mbfa([x, y], scenario.k, max_iters=scenario.mbfa_iters)
            qx, qy = project_mbfa(model, 0, tx), project_mbfa(model, 1, ty)
            row["cross_cov_rel_err"] = _rel_err(model.w[0] @ model.w[1].T, true_cross)
            row["train_nll"] = mbfa_nll(model, s_train)
        elif method == "lsq":
            lmap = fit_least_squares(x, y)
            qx, qy = lmap.apply(tx), ty
        elif method == "procrustes":
            lmap = fit_procrustes(x, y)
            qx, qy = lmap.apply(tx), ty
        elif method == "cca":
            cca = fit_cca(x, y, scenario.k)
            qx, qy = cca.project("x", tx), cca.project("y", ty)
        else:
            raise ParameterError(f"unknown method {method!r}")
        row.update({f"p@{k}": v for k, v in _precisions(qx, qy, scenario).items()})
        rows.append(row)
    return rows


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def format_report(scenario: Scenario, rows: list[dict], header: dict | None = None) -> str:
    lines = ["# mfalign synthetic benchmark"]
    for key, value in asdict(scenario).items():
        if isinstance(value, tuple):
            value = ",".join(value)
        lines.append(f"config.{key}: {value}")
    for key, value in (header or {}).items():
        lines.append(f"{key}: {value}")
    cols = ["method", "p@1", "p@5", "p@10", "cross_cov_rel_err", "train_nll"]
    lines.append("")
    lines.append("\t".join(cols))
    for row in rows:
        lines.append("\t".join(_fmt(row.get(c)) for c in cols))
    return "\n".join(lines) + "\n"
