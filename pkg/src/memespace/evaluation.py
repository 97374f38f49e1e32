"""Metrics and the two inference paths: the logistic head and retrieval-based
KNN majority voting.

KNN prediction is sigma(sum_k ybar_k * s_k) over the K most similar database
rows, where ybar is +1 for hateful and -1 for benign and s_k the similarity
score. The 0.5 decision threshold corresponds to a zero vote sum, so the
decision is invariant to any positive rescaling of the scores. The retrieval
database should come from training splits only; retrieval over labeled test
data leaks labels into the prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint
from .data import EmbeddingDataset
from .encoder import encode_dataset
from .errors import DimensionMismatch, EmptyIndex, SingleClass
from .retrieval import DenseIndex, build_dense_index, query_topk

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class PerExample:
    id: int
    score: float
    prediction: int
    label: int


@dataclass
class Metrics:
    auroc: float | None
    accuracy: float
    f1: float
    n_examples: int
    per_example: list[PerExample]


def _check_pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if len(scores) != len(labels):
        raise DimensionMismatch(f"{len(scores)} scores vs {len(labels)} labels")
    return scores, labels


def auroc(scores, labels) -> float:
    """Mann-Whitney rank AUROC with average ranks for ties: the probability a
    random positive outscores a random negative, ties counting one half."""
    scores, labels = _check_pair(scores, labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass(f"AUROC undefined with {n_pos} positives / {n_neg} negatives")
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    boundaries = np.nonzero(np.diff(s_sorted))[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(scores)]))
    for st, en in zip(starts, ends):
        ranks[order[st:en]] = (st + 1 + en) / 2.0
    u = float(ranks[labels == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def accuracy(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> float:
    scores, labels = _check_pair(scores, labels)
    if len(scores) == 0:
        raise DimensionMismatch("accuracy of an empty score list")
    preds = scores >= threshold
    return float(np.mean(preds == (labels == 1)))


def f1(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Positive-class F1; zero when precision + recall is zero."""
    scores, labels = _check_pair(scores, labels)
    if len(scores) == 0:
        raise DimensionMismatch("F1 of an empty score list")
    preds = scores >= threshold
    pos = labels == 1
    tp = float(np.sum(preds & pos))
    fp = float(np.sum(preds & ~pos))
    fn = float(np.sum(~preds & pos))
    if tp == 0.0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def knn_predict(index: DenseIndex, g_t: np.ndarray, k: int,
                exclude: frozenset[int] | set[int] = frozenset()) -> float:
    """Similarity-weighted majority vote over the top-k neighbours (all of
    them when the database holds fewer than k)."""
    if len(index) == 0:
        raise EmptyIndex("KNN over an empty index")
    neighbors = query_topk(index, g_t, k, exclude=exclude)
    vote = sum((1.0 if nb.label == 1 else -1.0) * nb.score for nb in neighbors)
    if vote >= 0:
        return 1.0 / (1.0 + math.exp(-vote))
    e = math.exp(vote)
    return e / (1.0 + e)


def _metrics_from_scores(ids, scores, labels, threshold: float = DEFAULT_THRESHOLD) -> Metrics:
    scores, labels = _check_pair(scores, labels)
    table = [PerExample(int(i), float(s), int(s >= threshold), int(l))
             for i, s, l in zip(ids, scores, labels)]
    try:
        auc = auroc(scores, labels)
    except SingleClass:
        auc = None
    return Metrics(auc, accuracy(scores, labels), f1(scores, labels), len(table), table)


def evaluate_logistic(test_ds: EmbeddingDataset, ckpt: Checkpoint, threads: int = 1) -> Metrics:
    """Eval-mode encode every record and score it with the logistic head."""
    if test_ds.d_img != ckpt.d_img or test_ds.d_txt != ckpt.d_txt:
        raise DimensionMismatch(
            f"test dims ({test_ds.d_img}, {test_ds.d_txt}) != checkpoint "
            f"({ckpt.d_img}, {ckpt.d_txt})")
    G = encode_dataset(test_ds, ckpt.params, threads=threads)
    logits = G @ ckpt.head.w + float(ckpt.head.b)
    scores = 1.0 / (1.0 + np.exp(-logits))
    return _metrics_from_scores(test_ds.ids, scores, test_ds.labels)


def evaluate_knn(test_ds: EmbeddingDataset, retrieval_ds: EmbeddingDataset,
                 ckpt: Checkpoint, k: int, exclude_self_ids: bool = True,
                 threads: int = 1) -> Metrics:
    """Score each test record by KNN voting over a database encoded from
    ``retrieval_ds`` with the checkpoint encoder. The two datasets may come
    from different domains. ``exclude_self_ids`` drops database rows whose id
    equals the test record's id, preventing trivial self-matching when a
    split is evaluated against itself.
    """
    if retrieval_ds.d_img != ckpt.d_img or retrieval_ds.d_txt != ckpt.d_txt:
        raise DimensionMismatch("retrieval dataset dims do not match the checkpoint")
    if test_ds.d_img != ckpt.d_img or test_ds.d_txt != ckpt.d_txt:
        raise DimensionMismatch("test dataset dims do not match the checkpoint")
    if len(retrieval_ds) == 0:
        raise EmptyIndex("empty retrieval dataset")
    index = build_dense_index(retrieval_ds, ckpt.params, ckpt.config.sim_metric, threads=threads)
    G_test = encode_dataset(test_ds, ckpt.params, threads=threads)
    scores = np.zeros(len(test_ds))
    for i in range(len(test_ds)):
        exclude: set[int] = set()
        if exclude_self_ids:
            exclude = set(np.nonzero(index.ids == test_ds.ids[i])[0].tolist())
        scores[i] = knn_predict(index, G_test[i], k, exclude=exclude)
    return _metrics_from_scores(test_ds.ids, scores, test_ds.labels)
