import math
import re
from collections import Counter

import numpy as np
import pytest

from memespace import errors
from memespace.data import RunConfig
from memespace.encoder import encode, init_params
from memespace.retrieval import (
    DenseIndex,
    SparseIndex,
    bm25_build,
    bm25_scores,
    bm25_topk,
    build_dense_index,
    hard_negative,
    pseudo_gold,
    query_topk,
    similarity,
    tokenize,
)

from conftest import make_random_dataset


class TestSimilarity:
    def test_cosine_orthogonal(self):
        assert similarity(np.array([1.0, 0]), np.array([0.0, 1]), "cosine") == 0.0

    def test_neg_l2_self(self, rng):
        x = rng.standard_normal(5)
        assert similarity(x, x, "neg_l2") == 0.0

    def test_inner_product(self):
        assert similarity(np.array([1.0, 2]), np.array([3.0, 4]), "inner_product") == 11.0

    def test_zero_norm(self):
        with pytest.raises(errors.ZeroNormVector):
            similarity(np.zeros(3), np.ones(3), "cosine")


def make_index(rng, n_rows, dim, metric):
    G = rng.standard_normal((n_rows, dim))
    labels = rng.integers(0, 2, size=n_rows).astype(np.uint8)
    ids = np.arange(100, 100 + n_rows, dtype=np.uint64)
    return DenseIndex(G, labels, ids, metric)


def sort_oracle(index, q, exclude=frozenset(), label_filter=None):
    """Full sort by (-score, row): the reference for every retrieval op."""
    rows = []
    for r in range(len(index)):
        if r in exclude:
            continue
        if label_filter is not None:
            kind, label = label_filter
            if kind == "same" and index.labels[r] != label:
                continue
            if kind == "opposite" and index.labels[r] == label:
                continue
        rows.append((-similarity(q, index.G[r], index.metric), r))
    rows.sort()
    return [r for _, r in rows]


class TestQueryTopk:
    def test_basis_vectors(self):
        index = DenseIndex(np.eye(4), np.zeros(4, np.uint8), np.arange(4, dtype=np.uint64), "cosine")
        hits = query_topk(index, np.eye(4)[1], 1)
        assert hits[0].row == 1
        assert hits[0].score == pytest.approx(1.0)

    def test_tie_break_lowest_row(self):
        G = np.tile(np.array([1.0, 2.0]), (5, 1))
        index = DenseIndex(G, np.zeros(5, np.uint8), np.arange(5, dtype=np.uint64), "cosine")
        hits = query_topk(index, np.array([1.0, 2.0]), 3)
        assert [h.row for h in hits] == [0, 1, 2]

    @pytest.mark.parametrize("metric", ["cosine", "inner_product", "neg_l2"])
    def test_matches_full_sort_oracle(self, rng, metric):
        index = make_index(rng, 200, 16, metric)
        for _ in range(10):
            q = rng.standard_normal(16)
            k = int(rng.integers(1, 20))
            exclude = set(map(int, rng.integers(0, 200, size=3)))
            lf = [None, ("same", 1), ("opposite", 0)][int(rng.integers(0, 3))]
            hits = query_topk(index, q, k, exclude=exclude, label_filter=lf)
            assert [h.row for h in hits] == sort_oracle(index, q, exclude, lf)[:k]

    def test_scores_non_increasing(self, rng):
        index = make_index(rng, 50, 8, "cosine")
        hits = query_topk(index, rng.standard_normal(8), 50)
        scores = [h.score for h in hits]
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_empty_candidates(self, rng):
        index = make_index(rng, 5, 4, "cosine")
        assert query_topk(index, np.ones(4), 3, exclude=set(range(5))) == []

    def test_cosine_scale_invariant_ranking(self, rng):
        index = make_index(rng, 60, 8, "cosine")
        q = rng.standard_normal(8)
        base = [h.row for h in query_topk(index, q, 60)]
        scaled = DenseIndex(index.G * 7.5, index.labels.copy(), index.ids.copy(), "cosine")
        assert [h.row for h in query_topk(scaled, q * 7.5, 60)] == base


class TestSelection:
    def test_pseudo_gold_two_rows(self):
        G = np.array([[1.0, 0], [0.8, 0.6], [0.0, 1]])
        index = DenseIndex(G, np.array([1, 1, 0], np.uint8), np.arange(3, dtype=np.uint64), "cosine")
        nb = pseudo_gold(index, 0, G[0])
        assert nb.row == 1

    def test_pseudo_gold_never_returns_anchor(self, rng):
        for metric in ("cosine", "inner_product", "neg_l2"):
            index = make_index(rng, 50, 6, metric)
            for a in range(0, 50, 7):
                nb = pseudo_gold(index, a, index.G[a])
                assert nb.row != a
                assert nb.label == index.labels[a]

    def test_duplicate_anchor_row_still_eligible(self):
        g = np.array([0.6, 0.8])
        G = np.vstack([g, g, [1.0, 0.0]])
        index = DenseIndex(G, np.array([1, 1, 1], np.uint8), np.arange(3, dtype=np.uint64), "cosine")
        nb = pseudo_gold(index, 0, g)
        assert nb.row == 1
        assert nb.score == pytest.approx(1.0)

    def test_pseudo_gold_no_candidate(self):
        index = DenseIndex(np.eye(2), np.array([1, 0], np.uint8), np.arange(2, dtype=np.uint64), "cosine")
        with pytest.raises(errors.NoCandidate):
            pseudo_gold(index, 0, index.G[0])

    def test_hard_negative_single_opposite(self):
        index = DenseIndex(np.eye(2), np.array([1, 0], np.uint8), np.arange(2, dtype=np.uint64), "cosine")
        nb = hard_negative(index, index.G[0], 1)
        assert nb.row == 1

    def test_hard_negative_confounder_case(self):
        # an opposite-label row exactly equal to the anchor scores 1.0
        g = np.array([0.6, 0.8])
        G = np.vstack([g, g, [0.0, 1.0]])
        index = DenseIndex(G, np.array([1, 0, 0], np.uint8), np.arange(3, dtype=np.uint64), "cosine")
        nb = hard_negative(index, g, 1)
        assert nb.row == 1
        assert nb.score == pytest.approx(1.0)

    def test_selection_matches_oracle(self, rng):
        index = make_index(rng, 120, 8, "cosine")
        for a in range(0, 120, 11):
            label = int(index.labels[a])
            nb = pseudo_gold(index, a, index.G[a])
            assert nb.row == sort_oracle(index, index.G[a], {a}, ("same", label))[0]
            hn = hard_negative(index, index.G[a], label)
            assert hn.row == sort_oracle(index, index.G[a], frozenset(), ("opposite", label))[0]
            assert hn.label != label


class TestBuildIndex:
    def test_empty_dataset(self, rng):
        ds = make_random_dataset(rng, n=0)
        cfg = RunConfig(projection_dim=4, pre_output_layers=1)
        params, _ = init_params(rng, 5, 3, cfg)
        index = build_dense_index(ds, params, "inner_product")
        assert len(index) == 0

    def test_purity_and_row_oracle(self, rng):
        ds = make_random_dataset(rng, n=9)
        cfg = RunConfig(projection_dim=4, pre_output_layers=2)
        params, _ = init_params(rng, 5, 3, cfg)
        a = build_dense_index(ds, params, "cosine")
        b = build_dense_index(ds, params, "cosine")
        assert np.array_equal(a.G, b.G)
        for i in range(len(ds)):
            g, _ = encode(ds.f_img[i], ds.f_txt[i], params, train=False)
            assert np.array_equal(a.G[i], g)
        assert np.array_equal(a.ids, ds.ids)

    def test_immutable(self, rng):
        index = make_index(rng, 4, 3, "cosine")
        with pytest.raises(ValueError):
            index.G[0, 0] = 5.0


# ---------------------------------------------------------------------------
# BM25

def bm25_oracle(docs_tokens, query_tokens, k1=1.5, b=0.75):
    """Direct formula: idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5))."""
    n = len(docs_tokens)
    avgdl = sum(len(d) for d in docs_tokens) / n
    df = Counter()
    for d in docs_tokens:
        df.update(set(d))
    scores = []
    for d in docs_tokens:
        tf = Counter(d)
        s = 0.0
        for t in query_tokens:
            if t not in tf:
                continue
            idf = math.log(1 + (n - df[t] + 0.5) / (df[t] + 0.5))
            denom = tf[t] + k1 * (1 - b + b * len(d) / avgdl)
            s += idf * tf[t] * (k1 + 1) / denom
        scores.append(s)
    return scores


WORDS = ["meme", "cat", "dog", "text", "image", "hateful", "benign", "caption", "online", "viral"]


class TestBM25:
    def test_tokenize(self):
        assert tokenize("Hello, WORLD!  it's 42") == ["hello", "world", "it", "s", "42"]

    def test_no_corpus_term(self):
        index = bm25_build({1: "cat dog", 2: "dog bird"}, {1: 0, 2: 1})
        hits = bm25_topk(index, "zebra", 2)
        assert [h.score for h in hits] == [0.0, 0.0]
        assert [h.row for h in hits] == [0, 1]

    def test_single_document_positive_score(self):
        index = bm25_build({5: "a meme about cats"}, {5: 1})
        hits = bm25_topk(index, "a meme about cats", 1)
        assert hits[0].score > 0.0

    def test_empty_corpus(self):
        with pytest.raises(errors.EmptyCorpus):
            bm25_build({}, {})

    def test_label_filter(self):
        index = bm25_build({1: "cat", 2: "cat", 3: "dog"}, {1: 0, 2: 1, 3: 1})
        hits = bm25_topk(index, "cat", 3, label_filter=("same", 1))
        assert all(h.label == 1 for h in hits)

    def test_matches_oracle_50_corpora(self, rng):
        for _ in range(50):
            n_docs = int(rng.integers(1, 12))
            docs = {}
            for i in range(n_docs):
                words = [WORDS[j] for j in rng.integers(0, len(WORDS), size=rng.integers(1, 15))]
                docs[i] = " ".join(words)
            labels = {i: int(rng.integers(0, 2)) for i in docs}
            index = bm25_build(docs, labels)
            query = " ".join(WORDS[j] for j in rng.integers(0, len(WORDS), size=4))
            scores = bm25_scores(index, query)
            expect = bm25_oracle([tokenize(docs[i]) for i in sorted(docs)], tokenize(query))
            assert np.max(np.abs(scores - np.array(expect))) < 1e-9
            # and ranking matches, ties by row
            hits = bm25_topk(index, query, n_docs)
            oracle_order = sorted(range(n_docs), key=lambda r: (-expect[r], r))
            assert [h.row for h in hits] == oracle_order
