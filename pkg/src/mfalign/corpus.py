"""Embedding files, dictionaries and word-similarity data."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import FormatError, InsufficientDataError, ShapeError, UndefinedCorrelationError

logger = logging.getLogger(__name__)

DEFAULT_VOCAB_LIMIT = 200000


@dataclass
class VocabEmbeddings:
    words: list
    matrix: np.ndarray
    language: str = ""
    normalized: bool = False
    duplicates: int = 0
    malformed: int = 0
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.words):
            raise ShapeError(f"{len(self.words)} words for a matrix of shape {self.matrix.shape}")
        if len(set(self.words)) != len(self.words):
            raise ShapeError("vocabulary contains duplicate tokens")

    @property
    def index(self) -> dict:
        if self._index is None:
            self._index = {w: i for i, w in enumerate(self.words)}
        return self._index

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word) -> bool:
        return word in self.index

    def vector(self, word) -> np.ndarray:
        return self.matrix[self.index[word]]

    def with_matrix(self, matrix, normalized: bool = False) -> "VocabEmbeddings":
        """Same vocabulary, new vectors (e.g. projected into a latent space)."""
        return VocabEmbeddings(list(self.words), matrix, self.language, normalized)


def load_embeddings(path, limit: int | None = None, language: str = "") -> VocabEmbeddings:
    """Read a word2vec text file: header "n d", then "token f1 ... fd" per line.

    The first ``limit`` distinct tokens are kept. Repeated tokens keep their
    first vector and lines that cannot be parsed are skipped; both are
    tallied on the result. A first vector line whose length disagrees with
    the header raises FormatError.
    """
    words: list = []
    rows: list = []
    seen: set = set()
    duplicates = malformed = 0
    with open(path, encoding="utf-8", errors="surrogateescape") as f:
        header = f.readline().split()
        try:
            _, dim = int(header[0]), int(header[1])
        except (IndexError, ValueError):
            raise FormatError(f"{path}: expected an 'n d' header line") from None
        first = True
        for line in f:
            if limit is not None and len(words) >= limit:
                break
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) == 1 and not parts[0].strip():
                continue
            if len(parts) != dim + 1:
                if first:
                    raise FormatError(f"{path}: header says d={dim} but first vector has {len(parts) - 1} values")
                malformed += 1
                continue
            first = False
            token = parts[0]
            try:
                values = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                malformed += 1
                continue
            if not token or not np.all(np.isfinite(values)):
                malformed += 1
                continue
            if token in seen:
                duplicates += 1
                continue
            seen.add(token)
            words.append(token)
            rows.append(values)
    if duplicates or malformed:
        logger.warning("%s: %d duplicate and %d malformed lines skipped", path, duplicates, malformed)
    matrix = np.vstack(rows) if rows else np.zeros((0, dim))
    return VocabEmbeddings(words, matrix, language, duplicates=duplicates, malformed=malformed)


def save_embeddings(path, emb: VocabEmbeddings) -> None:
    # repr gives the shortest string that round-trips a float64 exactly
    with open(path, "w", encoding="utf-8", errors="surrogateescape") as f:
        f.write(f"{len(emb)} {emb.dim}\n")
        for word, row in zip(emb.words, emb.matrix):
            f.write(word + " " + " ".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# dictionaries
# ---------------------------------------------------------------------------


@dataclass
class Dictionary:
    """Ordered (source, target) entries; many-to-many allowed."""

    entries: list
    duplicates: int = 0
    malformed: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def as_set(self) -> set:
        return set(self.entries)

    def gold(self) -> dict:
        """source -> set of acceptable targets."""
        out = defaultdict(set)
        for s, t in self.entries:
            out[s].add(t)
        return dict(out)


@dataclass
class MultiDictionary:
    entries: list

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def arity(self) -> int:
        return len(self.entries[0]) if self.entries else 0


def _read_tuples(path, arity: int | None):
    tuples, malformed = [], 0
    with open(path, encoding="utf-8", errors="surrogateescape") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if arity is not None and len(parts) != arity:
                malformed += 1
                continue
            tuples.append(tuple(parts))
    return tuples, malformed


def load_dictionary(path, dedup: bool = False) -> Dictionary:
    """Read whitespace-separated "source target" lines.

    Repeated lines are kept (each becomes a training row) unless ``dedup``.
    """
    pairs, malformed = _read_tuples(path, 2)
    seen: set = set()
    kept = []
    duplicates = 0
    for pair in pairs:
        if pair in seen:
            duplicates += 1
            if dedup:
                continue
        seen.add(pair)
        kept.append(pair)
    if malformed:
        logger.warning("%s: %d lines without exactly two tokens skipped", path, malformed)
    return Dictionary(kept, duplicates=duplicates, malformed=malformed)


def load_multi_dictionary(path, arity: int | None = None) -> MultiDictionary:
    tuples, malformed = _read_tuples(path, arity)
    if arity is None and tuples:
        arity = len(tuples[0])
        malformed += sum(len(t) != arity for t in tuples)
        tuples = [t for t in tuples if len(t) == arity]
    if malformed:
        logger.warning("%s: %d lines with the wrong number of tokens skipped", path, malformed)
    return MultiDictionary(list(dict.fromkeys(tuples)))


def save_dictionary(path, entries) -> None:
    with open(path, "w", encoding="utf-8", errors="surrogateescape") as f:
        for entry in entries:
            f.write(" ".join(entry) + "\n")


@dataclass
class PairedDataset:
    views: list
    provenance: list
    dropped: int

    @property
    def n(self) -> int:
        return len(self.provenance)


def build_multi_pairs(entries: Sequence[tuple], spaces: Sequence[VocabEmbeddings]) -> PairedDataset:
    """Co-indexed rows for every entry whose tokens are all in vocabulary."""
    kept = [e for e in entries if all(tok in sp for tok, sp in zip(e, spaces))]
    if not kept:
        raise InsufficientDataError("no dictionary entry has all of its tokens in vocabulary")
    views = [sp.matrix[[sp.index[e[i]] for e in kept]] for i, sp in enumerate(spaces)]
    return PairedDataset(views=views, provenance=kept, dropped=len(entries) - len(kept))


def build_pairs(dictionary: Dictionary, src: VocabEmbeddings, tgt: VocabEmbeddings) -> PairedDataset:
    return build_multi_pairs(dictionary.entries, [src, tgt])


def pseudo_dictionary(a: VocabEmbeddings, b: VocabEmbeddings) -> Dictionary:
    """(w, w) for every token spelled identically in both vocabularies."""
    return Dictionary([(w, w) for w in a.words if w in b])


def intersect_dictionaries(ab, ba, ac, ca, bc, cb) -> MultiDictionary:
    """Word triples (a, b, c) supported by all six directed dictionaries.

    Each argument is a Dictionary for the named direction, e.g. ``ab`` maps
    language A to language B.
    """
    sets = {name: d.as_set() for name, d in zip(("ab", "ba", "ac", "ca", "bc", "cb"), (ab, ba, ac, ca, bc, cb))}
    a_to_c = defaultdict(set)
    for a, c in sets["ac"]:
        a_to_c[a].add(c)
    triples = []
    for a, b in sets["ab"]:
        if (b, a) not in sets["ba"]:
            continue
        for c in a_to_c.get(a, ()):
            if (c, a) in sets["ca"] and (b, c) in sets["bc"] and (c, b) in sets["cb"]:
                triples.append((a, b, c))
    triples.sort()
    if not triples:
        logger.warning("dictionary intersection is empty")
    return MultiDictionary(triples)


# ---------------------------------------------------------------------------
# word similarity
# ---------------------------------------------------------------------------


def spearman(scores_a, scores_b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("spearman needs two vectors of equal length")
    if a.size < 2:
        raise InsufficientDataError("spearman needs at least two observations")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    denom = np.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if denom == 0:
        raise UndefinedCorrelationError("one of the inputs has constant ranks")
    return float(np.dot(ra, rb) / denom)


def load_similarity_dataset(path) -> list:
    """Lines "word1 word2 score" -> list of (word1, word2, score)."""
    out = []
    with open(path, encoding="utf-8", errors="surrogateescape") as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 'word1 word2 score'")
            try:
                out.append((parts[0], parts[1], float(parts[2])))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: score is not a number") from None
    return out


def word_similarity(pairs, vector: Callable[[str], np.ndarray | None]):
    """Spearman correlation between gold scores and cosine similarities.

    ``vector`` returns a word's (projected) vector or None when it is out of
    vocabulary; such pairs are dropped. Returns ``(rho, used, dropped)``.
    """
    gold, predicted = [], []
    dropped = 0
    for w1, w2, score in pairs:
        v1, v2 = vector(w1), vector(w2)
        if v1 is None or v2 is None:
            dropped += 1
            continue
        denom = np.linalg.norm(v1) * np.linalg.norm(v2)
        if denom == 0:
            dropped += 1
            continue
        gold.append(score)
        predicted.append(float(v1 @ v2) / denom)
    return spearman(gold, predicted), len(gold), dropped
