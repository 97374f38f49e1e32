"""Exact dense similarity search over an epoch snapshot of encoded training
embeddings, selection of pseudo-gold positives and hard negatives, and the
BM25 sparse alternative.

Search is deliberately brute force: at desk scale an exact contiguous scan is
fast, and exactness is what the oracle tests pin down. The scan is the hot
path; index rows live in one row-major float64 matrix so each query is a
single fused matrix-vector product plus cached norms.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .data import EmbeddingDataset, SIM_METRICS
from .encoder import VlEncoderParams, encode_dataset
from .errors import DimensionMismatch, EmptyCorpus, NoCandidate, ZeroNormVector

BM25_K1 = 1.5
BM25_B = 0.75


@dataclass(frozen=True)
class Neighbor:
    row: int
    id: int
    label: int
    score: float


def similarity(a: np.ndarray, b: np.ndarray, metric: str) -> float:
    """cosine in [-1, 1], raw inner product, or negative squared L2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"similarity over shapes {a.shape} vs {b.shape}")
    if metric == "cosine":
        na = np.linalg.norm(a)
        nb = np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise ZeroNormVector("cosine similarity of a zero-norm vector")
        return float(a @ b / (na * nb))
    if metric == "inner_product":
        return float(a @ b)
    if metric == "neg_l2":
        d = a - b
        return float(-(d @ d))
    raise DimensionMismatch(f"unknown metric {metric!r}")


@dataclass
class DenseIndex:
    """Immutable snapshot of encoded embeddings with labels and ids.

    Built once per epoch, rebuilt only as a whole; queries are pure reads.
    """

    G: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    metric: str
    norm_cache: np.ndarray | None = None

    def __post_init__(self):
        self.G = np.ascontiguousarray(self.G, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.ids = np.asarray(self.ids, dtype=np.uint64)
        if self.metric not in SIM_METRICS:
            raise DimensionMismatch(f"unknown metric {self.metric!r}")
        if not (self.G.shape[0] == len(self.labels) == len(self.ids)):
            raise DimensionMismatch("index row count != label/id count")
        if self.metric == "cosine":
            norms = np.linalg.norm(self.G, axis=1)
            if np.any(norms == 0.0):
                row = int(np.nonzero(norms == 0.0)[0][0])
                raise ZeroNormVector(f"index row {row} has zero norm under the cosine metric")
            self.norm_cache = norms
        for arr in (self.G, self.labels, self.ids):
            arr.setflags(write=False)
        if self.norm_cache is not None:
            self.norm_cache.setflags(write=False)

    def __len__(self) -> int:
        return self.G.shape[0]

    @property
    def n(self) -> int:
        return self.G.shape[1]


def build_dense_index(ds: EmbeddingDataset, params: VlEncoderParams, metric: str,
                      threads: int = 1) -> DenseIndex:
    """Row i is the eval-mode encoding of record i, in dataset order."""
    G = encode_dataset(ds, params, threads=threads)
    return DenseIndex(G, ds.labels.copy(), ds.ids.copy(), metric)


def _scores(index: DenseIndex, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (index.n,):
        raise DimensionMismatch(f"query shape {q.shape} != ({index.n},)")
    if index.metric == "cosine":
        qn = np.linalg.norm(q)
        if qn == 0.0:
            raise ZeroNormVector("cosine query has zero norm")
        return (index.G @ q) / (index.norm_cache * qn)
    if index.metric == "inner_product":
        return index.G @ q
    row_sq = np.einsum("ij,ij->i", index.G, index.G)
    return -(row_sq - 2.0 * (index.G @ q) + q @ q)


def query_topk(index: DenseIndex, q: np.ndarray, k: int,
               exclude: frozenset[int] | set[int] = frozenset(),
               label_filter: tuple[str, int] | None = None) -> list[Neighbor]:
    """Exact top-k among rows passing the filter, descending score, ties
    broken by lowest row index. ``label_filter`` is ("same", l) or
    ("opposite", l). Returns fewer than k only when candidates run out."""
    if k < 1:
        raise DimensionMismatch(f"k must be >= 1, got {k}")
    scores = _scores(index, q)
    mask = np.ones(len(index), dtype=bool)
    if label_filter is not None:
        kind, label = label_filter
        if kind == "same":
            mask &= index.labels == label
        elif kind == "opposite":
            mask &= index.labels != label
        else:
            raise DimensionMismatch(f"bad label filter {label_filter!r}")
    for row in exclude:
        if 0 <= row < len(index):
            mask[row] = False
    candidates = np.nonzero(mask)[0]
    if candidates.size == 0:
        return []
    # stable sort on negated scores: equal scores keep ascending row order
    order = candidates[np.argsort(-scores[candidates], kind="stable")][:k]
    return [Neighbor(int(r), int(index.ids[r]), int(index.labels[r]), float(scores[r]))
            for r in order]


def pseudo_gold(index: DenseIndex, anchor_row: int, g_anchor: np.ndarray) -> Neighbor:
    """Most similar same-label row, the anchor's own row excluded."""
    label = int(index.labels[anchor_row])
    hits = query_topk(index, g_anchor, 1, exclude={anchor_row}, label_filter=("same", label))
    if not hits:
        raise NoCandidate(f"no same-label candidate for row {anchor_row}")
    return hits[0]


def hard_negative(index: DenseIndex, g_anchor: np.ndarray, anchor_label: int) -> Neighbor:
    """Most similar opposite-label row; the anchor's own row shares its label
    so no self-exclusion is needed."""
    hits = query_topk(index, g_anchor, 1, label_filter=("opposite", anchor_label))
    if not hits:
        raise NoCandidate(f"no opposite-label candidate (anchor label {anchor_label})")
    return hits[0]


# --------------------------------------------------------------------------
# Sparse retrieval

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class SparseIndex:
    docs: list[list[str]]
    term_freqs: list[Counter]
    doc_lens: np.ndarray
    avgdl: float
    idf: dict[str, float]
    labels: np.ndarray
    ids: np.ndarray
    k1: float = BM25_K1
    b: float = BM25_B

    def __len__(self) -> int:
        return len(self.docs)


def bm25_build(docs: dict[int, str], labels: dict[int, int]) -> SparseIndex:
    """Okapi BM25 index over the corpus, rows ordered by ascending id.

    idf uses the floored form ln(1 + (N - df + 0.5)/(df + 0.5)) so every
    matching term scores positive, including in a single-document corpus.
    """
    if not docs:
        raise EmptyCorpus("sparse index needs a non-empty corpus")
    ids = sorted(docs)
    tokenized = [tokenize(docs[i]) for i in ids]
    term_freqs = [Counter(toks) for toks in tokenized]
    doc_lens = np.array([len(toks) for toks in tokenized], dtype=np.float64)
    n = len(ids)
    avgdl = float(doc_lens.mean())
    df: Counter = Counter()
    for tf in term_freqs:
        df.update(tf.keys())
    idf = {t: math.log(1.0 + (n - c + 0.5) / (c + 0.5)) for t, c in df.items()}
    return SparseIndex(tokenized, term_freqs, doc_lens, avgdl, idf,
                       np.array([labels[i] for i in ids], dtype=np.uint8),
                       np.array(ids, dtype=np.uint64))


def bm25_scores(index: SparseIndex, query_text: str) -> np.ndarray:
    q_tokens = tokenize(query_text)
    scores = np.zeros(len(index), dtype=np.float64)
    for i, tf in enumerate(index.term_freqs):
        dl = index.doc_lens[i]
        norm = index.k1 * (1.0 - index.b + index.b * dl / index.avgdl) if index.avgdl > 0 else index.k1
        s = 0.0
        for t in q_tokens:
            f = tf.get(t)
            if not f:
                continue
            s += index.idf[t] * f * (index.k1 + 1.0) / (f + norm)
        scores[i] = s
    return scores


def bm25_topk(index: SparseIndex, query_text: str, k: int,
              label_filter: tuple[str, int] | None = None) -> list[Neighbor]:
    """Top-k BM25 matches, descending score, ties by lowest row index."""
    if k < 1:
        raise DimensionMismatch(f"k must be >= 1, got {k}")
    scores = bm25_scores(index, query_text)
    mask = np.ones(len(index), dtype=bool)
    if label_filter is not None:
        kind, label = label_filter
        if kind == "same":
            mask &= index.labels == label
        elif kind == "opposite":
            mask &= index.labels != label
        else:
            raise DimensionMismatch(f"bad label filter {label_filter!r}")
    candidates = np.nonzero(mask)[0]
    order = candidates[np.argsort(-scores[candidates], kind="stable")][:k]
    return [Neighbor(int(r), int(index.ids[r]), int(index.labels[r]), float(scores[r]))
            for r in order]
