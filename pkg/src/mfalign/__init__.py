"""Align monolingual word embeddings in a shared latent space with
inter-battery and multiple-battery factor analysis."""

__version__ = "0.1.0"

from .baselines import CcaModel, LinearMap, fit_cca, fit_least_squares, fit_procrustes
from .models import (
    IbfaModel,
    LikelihoodTerms,
    MbfaModel,
    batch_project,
    em_step,
    fit_ibfa,
    fit_mbfa,
    joint_log_likelihood,
    mbfa_nll,
    project,
    project_mbfa,
    sample_pair,
    sample_pairs,
)
from .storage import load_model, save_model

__all__ = [
    "CcaModel", "IbfaModel", "LikelihoodTerms", "LinearMap", "MbfaModel",
    "batch_project", "em_step", "fit_cca", "fit_ibfa", "fit_least_squares", "fit_mbfa", "fit_procrustes",
    "joint_log_likelihood", "load_model", "mbfa_nll", "project", "project_mbfa",
    "sample_pair", "sample_pairs", "save_model",
]
