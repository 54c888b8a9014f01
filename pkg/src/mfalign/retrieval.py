"""Translation retrieval over aligned spaces.

Similarities are cosines. Rankings are by descending score with ties broken
by ascending label, so results do not depend on batch order or layout.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError, ParameterError, ShapeError
from .linalg import as_matrix

BATCH_ROWS = 256


def _unit_rows(vectors, what: str) -> np.ndarray:
    vectors = as_matrix(vectors, what)
    norms = np.linalg.norm(vectors, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        shown = ", ".join(map(str, bad[:20]))
        raise ShapeError(f"{what} has zero-norm rows: {shown}{' ...' if bad.size > 20 else ''}")
    return vectors / norms[:, None]


class RetrievalIndex:
    """Unit-normalised target vectors with their labels."""

    def __init__(self, vectors, labels: Sequence[Hashable] | None = None):
        self.vectors = _unit_rows(vectors, "index vectors")
        n = self.vectors.shape[0]
        self.labels = list(range(n)) if labels is None else list(labels)
        if len(self.labels) != n:
            raise ShapeError(f"{len(self.labels)} labels for {n} vectors")
        order = sorted(range(n), key=lambda i: self.labels[i])
        self.label_rank = np.empty(n, dtype=np.int64)
        self.label_rank[order] = np.arange(n)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def labels_of(self, ids) -> list:
        return [self.labels[i] for i in ids]


def _top_rows(scores: np.ndarray, topk: int, label_rank: np.ndarray) -> np.ndarray:
    out = np.empty((scores.shape[0], topk), dtype=np.int64)
    n = scores.shape[1]
    for r, row in enumerate(scores):
        if topk < n:
            # keep every candidate tied with the k-th score so the tie-break is exact
            threshold = np.partition(row, n - topk)[n - topk]
            cand = np.flatnonzero(row >= threshold)
        else:
            cand = np.arange(n)
        order = np.lexsort((label_rank[cand], -row[cand]))
        out[r] = cand[order[:topk]]
    return out


def _check_queries(index: RetrievalIndex, queries, topk: int) -> np.ndarray:
    q = _unit_rows(queries, "queries")
    if q.shape[1] != index.dim:
        raise ShapeError(f"queries have dimension {q.shape[1]}, index has {index.dim}")
    if not 1 <= topk <= len(index):
        raise ParameterError(f"topk={topk} must lie in [1, {len(index)}]")
    return q


def nn_topk(index: RetrievalIndex, queries, topk: int) -> np.ndarray:
    """Indices of the ``topk`` most cosine-similar targets for each query."""
    q = _check_queries(index, queries, topk)
    out = np.empty((q.shape[0], topk), dtype=np.int64)
    for start in range(0, q.shape[0], BATCH_ROWS):
        block = q[start:start + BATCH_ROWS] @ index.vectors.T
        out[start:start + BATCH_ROWS] = _top_rows(block, topk, index.label_rank)
    return out


def mean_topk_similarity(a: np.ndarray, b: np.ndarray, neighborhood: int) -> np.ndarray:
    """For each unit row of ``a``, the mean cosine to its ``neighborhood`` nearest rows of ``b``."""
    out = np.empty(a.shape[0])
    n = b.shape[0]
    for start in range(0, a.shape[0], BATCH_ROWS):
        sims = a[start:start + BATCH_ROWS] @ b.T
        top = np.partition(sims, n - neighborhood, axis=1)[:, n - neighborhood:]
        out[start:start + BATCH_ROWS] = np.sort(top, axis=1).mean(axis=1)
    return out


def csls_topk(index: RetrievalIndex, queries, topk: int, neighborhood: int = 10, source=None) -> np.ndarray:
    """Rank targets by cross-domain similarity local scaling.

    score(q, t) = 2 cos(q, t) - r_T(q) - r_S(t), where r_T(q) averages the
    cosines of q to its nearest targets and r_S(t) averages the cosines of t
    to its nearest source-side vectors. ``source`` defaults to the queries.
    """
    q = _check_queries(index, queries, topk)
    src = q if source is None else _unit_rows(source, "source vectors")
    if src.shape[1] != index.dim:
        raise ShapeError("source vectors and index differ in dimension")
    if not 1 <= neighborhood <= min(len(index), src.shape[0]):
        raise ParameterError(
            f"neighborhood={neighborhood} must lie in [1, {min(len(index), src.shape[0])}]"
        )
    r_target = mean_topk_similarity(q, index.vectors, neighborhood)
    r_source = mean_topk_similarity(index.vectors, src, neighborhood)
    out = np.empty((q.shape[0], topk), dtype=np.int64)
    for start in range(0, q.shape[0], BATCH_ROWS):
        stop = start + BATCH_ROWS
        block = 2.0 * (q[start:stop] @ index.vectors.T) - r_target[start:stop, None] - r_source[None, :]
        out[start:stop] = _top_rows(block, topk, index.label_rank)
    return out


def retrieve(index: RetrievalIndex, queries, topk: int, metric: str = "nn", neighborhood: int = 10, source=None):
    if metric == "nn":
        return nn_topk(index, queries, topk)
    if metric == "csls":
        return csls_topk(index, queries, topk, neighborhood, source)
    raise ParameterError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# precision@k and reports
# ---------------------------------------------------------------------------

DEFAULT_KS = (1, 5, 10)


@dataclass
class RetrievalReport:
    method: str
    metric: str
    precision_at: dict
    per_query: list = field(default_factory=list)
    n_queries: int = 0
    skipped: int = 0
    header: dict = field(default_factory=dict)

    def to_text(self, per_query: bool = True) -> str:
        lines = ["# mfalign retrieval report", f"method: {self.method}", f"metric: {self.metric}",
                 f"queries: {self.n_queries}", f"skipped: {self.skipped}"]
        for k in sorted(self.precision_at):
            lines.append(f"precision@{k}: {self.precision_at[k]!r}")
        for key, value in self.header.items():
            lines.append(f"{key}: {value}")
        if per_query and self.per_query:
            width = max(len(r) for _, r in self.per_query)
            lines.append("")
            lines.append("\t".join(["query"] + [f"rank-{i + 1}" for i in range(width)]))
            for query, ranked in self.per_query:
                lines.append("\t".join([str(query)] + [str(c) for c in ranked]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RetrievalReport":
        head, _, body = text.partition("\n\n")
        fields: dict = {}
        for line in head.splitlines():
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition(": ")
            if not sep:
                raise FormatError(f"bad report header line: {line!r}")
            fields[key] = value
        try:
            precision = {int(k.split("@")[1]): float(v) for k, v in fields.items() if k.startswith("precision@")}
            report = cls(method=fields.pop("method"), metric=fields.pop("metric"), precision_at=precision,
                         n_queries=int(fields.pop("queries")), skipped=int(fields.pop("skipped")))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"incomplete report header: {exc}") from None
        report.header = {k: v for k, v in fields.items() if not k.startswith("precision@")}
        rows = body.strip("\n").splitlines()[1:]
        report.per_query = [(r.split("\t")[0], r.split("\t")[1:]) for r in rows]
        return report


def precision_at_k(
    ranked: Mapping[Hashable, Sequence[Hashable]],
    gold: Mapping[Hashable, Iterable[Hashable]],
    ks: Sequence[int] = DEFAULT_KS,
    method: str = "",
    metric: str = "nn",
) -> RetrievalReport:
    """Fraction of queries whose top-k candidates include any gold answer.

    Queries absent from ``gold`` are left out and counted in ``skipped``.
    """
    hits = {k: 0 for k in ks}
    used = 0
    skipped = 0
    per_query = []
    for query, candidates in ranked.items():
        answers = gold.get(query)
        if not answers:
            skipped += 1
            continue
        answers = set(answers)
        used += 1
        first = next((i for i, c in enumerate(candidates) if c in answers), None)
        for k in ks:
            if first is not None and first < k:
                hits[k] += 1
        per_query.append((query, list(candidates)))
    precision = {k: (hits[k] / used if used else 0.0) for k in ks}
    return RetrievalReport(method=method, metric=metric, precision_at=precision,
                           per_query=per_query, n_queries=used, skipped=skipped)


# ---------------------------------------------------------------------------
# sentences
# ---------------------------------------------------------------------------


def compute_idf(sentences: Sequence[Sequence[str]]) -> dict:
    """Smoothed idf: log((1 + N) / (1 + df)) + 1."""
    n = len(sentences)
    df = Counter()
    for sent in sentences:
        df.update(set(sent))
    return {w: math.log((1 + n) / (1 + c)) + 1.0 for w, c in df.items()}


def sentence_embed_tfidf(sentences: Sequence[Sequence[str]], embeddings, idf: Mapping[str, float]):
    """tf-idf weighted average of word vectors per sentence.

    ``embeddings`` needs ``index`` (token -> row) and ``matrix``. Tokens
    without a vector or an idf weight are skipped. Returns ``(vectors,
    usable)``; sentences with no usable token get a zero row and
    ``usable = False``.
    """
    lookup = embeddings.index
    matrix = embeddings.matrix
    out = np.zeros((len(sentences), matrix.shape[1]))
    usable = np.zeros(len(sentences), dtype=bool)
    for i, sent in enumerate(sentences):
        counts = Counter(t for t in sent if t in lookup and t in idf)
        if not counts:
            continue
        rows = [lookup[t] for t in counts]
        weights = np.array([tf * idf[t] for t, tf in counts.items()])
        if weights.sum() <= 0:
            continue
        out[i] = weights @ matrix[rows] / weights.sum()
        usable[i] = True
    return out, usable


def sentence_retrieval(
    src_sentences: Sequence[Sequence[str]],
    tgt_sentences: Sequence[Sequence[str]],
    src_embeddings,
    tgt_embeddings,
    n_queries: int = 2000,
    n_targets: int = 200000,
    seed: int = 0,
    metric: str = "nn",
    neighborhood: int = 10,
    method: str = "",
) -> RetrievalReport:
    """Retrieve the parallel translation of sampled source sentences.

    Sentence i of the source side is translated by sentence i of the target
    side. A pool of ``n_targets`` pairs is drawn (all of them if the corpus
    is smaller), idf is computed per language over its side of the pool, and
    ``n_queries`` source sentences are ranked against every usable target.
    """
    if len(src_sentences) != len(tgt_sentences):
        raise ShapeError("parallel corpus sides differ in length")
    rng = np.random.default_rng(seed)
    total = len(src_sentences)
    pool = np.arange(total) if total <= n_targets else np.sort(rng.choice(total, n_targets, replace=False))
    src_pool = [src_sentences[i] for i in pool]
    tgt_pool = [tgt_sentences[i] for i in pool]
    src_vec, src_ok = sentence_embed_tfidf(src_pool, src_embeddings, compute_idf(src_pool))
    tgt_vec, tgt_ok = sentence_embed_tfidf(tgt_pool, tgt_embeddings, compute_idf(tgt_pool))
    tgt_ids = np.flatnonzero(tgt_ok)
    candidates = np.flatnonzero(src_ok & tgt_ok)
    if candidates.size == 0 or tgt_ids.size == 0:
        raise ParameterError("no usable sentence pairs after dropping out-of-vocabulary sentences")
    chosen = np.sort(rng.choice(candidates, min(n_queries, candidates.size), replace=False))
    index = RetrievalIndex(tgt_vec[tgt_ids], labels=[int(i) for i in tgt_ids])
    topk = min(max(DEFAULT_KS), len(index))
    source = src_vec[src_ok] if metric == "csls" else None
    ids = retrieve(index, src_vec[chosen], topk, metric, neighborhood, source)
    ranked = {int(q): index.labels_of(row) for q, row in zip(chosen, ids)}
    gold = {int(q): {int(q)} for q in chosen}
    report = precision_at_k(ranked, gold, method=method, metric=metric)
    report.skipped = int(len(pool) - candidates.size)
    report.header = {"sentence_pool": len(pool), "usable_targets": int(tgt_ids.size)}
    return report
