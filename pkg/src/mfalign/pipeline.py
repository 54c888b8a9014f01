"""End-to-end workflows shared by the command-line tool."""

from __future__ import annotations

import hashlib
import logging

import numpy as np

from .baselines import CcaModel, LinearMap
from .corpus import Dictionary, VocabEmbeddings
from .errors import InsufficientDataError, ParameterError
from .models import IbfaModel, MbfaModel, batch_project, joint_log_likelihood, project_mbfa, sample_pairs
from .retrieval import RetrievalIndex, mean_topk_similarity, nn_topk, precision_at_k, retrieve

logger = logging.getLogger(__name__)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def map_view(model, emb: VocabEmbeddings, view: int, role: str) -> VocabEmbeddings:
    """Vectors of ``emb`` in the space where retrieval happens.

    Factor models and CCA project every view into their latent space. Linear
    maps send the source side into the target space and leave the target
    side as is. ``role`` is "src" or "tgt".
    """
    if isinstance(model, IbfaModel):
        if view not in (0, 1):
            raise ParameterError("an IBFA model has views 0 and 1 only")
        matrix = batch_project(model, view, emb.matrix)
    elif isinstance(model, MbfaModel):
        matrix = project_mbfa(model, view, emb.matrix)
    elif isinstance(model, CcaModel):
        matrix = model.project(view, emb.matrix)
    elif isinstance(model, LinearMap):
        matrix = model.apply(emb.matrix) if role == "src" else emb.matrix
    else:
        raise ParameterError(f"unsupported model type {type(model).__name__}")
    return emb.with_matrix(matrix)


def _nonzero(emb: VocabEmbeddings):
    keep = np.linalg.norm(emb.matrix, axis=1) > 0
    if not keep.all():
        logger.warning("%d zero vectors removed before retrieval", int((~keep).sum()))
    return [w for w, k in zip(emb.words, keep) if k], emb.matrix[keep]


def evaluate_translation(
    src: VocabEmbeddings,
    tgt: VocabEmbeddings,
    dictionary: Dictionary,
    metric: str = "nn",
    neighborhood: int = 10,
    method: str = "",
    ks=(1, 5, 10),
):
    """Word-translation precision@k in an already aligned pair of spaces.

    Queries are the dictionary sources that are in vocabulary and have at
    least one in-vocabulary translation; every such translation counts.
    """
    src_words, src_matrix = _nonzero(src)
    tgt_words, tgt_matrix = _nonzero(tgt)
    src_pos = {w: i for i, w in enumerate(src_words)}
    tgt_set = set(tgt_words)
    gold: dict = {}
    oov = 0
    for s, t in dictionary.entries:
        if s in src_pos and t in tgt_set:
            gold.setdefault(s, set()).add(t)
        else:
            oov += 1
    if not gold:
        raise InsufficientDataError("evaluation set is empty after dropping out-of-vocabulary entries")
    queries = list(gold)
    index = RetrievalIndex(tgt_matrix, labels=tgt_words)
    topk = min(max(ks), len(index))
    ids = retrieve(index, src_matrix[[src_pos[q] for q in queries]], topk, metric, neighborhood, src_matrix)
    ranked = {q: index.labels_of(row) for q, row in zip(queries, ids)}
    report = precision_at_k(ranked, gold, ks=ks, method=method, metric=metric)
    report.header["oov_entries"] = oov
    return report


def translate_words(src, tgt, words, topk=10, metric="nn", neighborhood=10):
    """Top-k translations with their scores for each in-vocabulary word."""
    src_words, src_matrix = _nonzero(src)
    tgt_words, tgt_matrix = _nonzero(tgt)
    src_pos = {w: i for i, w in enumerate(src_words)}
    missing = [w for w in words if w not in src_pos]
    found = [w for w in words if w in src_pos]
    if not found:
        return {}, missing
    index = RetrievalIndex(tgt_matrix, labels=tgt_words)
    topk = min(topk, len(index))
    q = src_matrix[[src_pos[w] for w in found]]
    ids = retrieve(index, q, topk, metric, neighborhood, src_matrix)
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    cos = qn @ index.vectors.T
    if metric == "csls":
        src_unit = src_matrix / np.linalg.norm(src_matrix, axis=1, keepdims=True)
        r_t = mean_topk_similarity(qn, index.vectors, neighborhood)
        r_s = mean_topk_similarity(index.vectors, src_unit, neighborhood)
        scores = 2 * cos - r_t[:, None] - r_s[None, :]
    else:
        scores = cos
    out = {w: [(index.labels[j], float(scores[i, j])) for j in row] for i, (w, row) in enumerate(zip(found, ids))}
    return out, missing


def sample_word_pairs(model: IbfaModel, src: VocabEmbeddings, tgt: VocabEmbeddings, count: int, seed: int):
    """Sample vector pairs, snap each to its nearest word, rank by log density.

    Returns rows ``(rank, src_word, tgt_word, logp)`` sorted by descending
    joint log-likelihood of the sampled vectors (ties keep sampling order).
    """
    if not isinstance(model, IbfaModel):
        raise ParameterError("sampling needs an IBFA model")
    if count == 0:
        return []
    x, y = sample_pairs(model, count, seed)
    logp = joint_log_likelihood(model, x, y).total
    src_ids = nn_topk(RetrievalIndex(src.matrix), x, 1)[:, 0]
    tgt_ids = nn_topk(RetrievalIndex(tgt.matrix), y, 1)[:, 0]
    order = sorted(range(count), key=lambda i: -logp[i])
    return [(rank + 1, src.words[src_ids[i]], tgt.words[tgt_ids[i]], float(logp[i])) for rank, i in enumerate(order)]
