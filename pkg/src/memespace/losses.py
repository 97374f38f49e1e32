"""Contrastive and classification losses with analytic gradients.

The contrastive loss is a softmax negative log-likelihood over raw
similarities: the positive's similarity competes against every negative's.
No temperature is applied; cosine keeps the arguments in [-1, 1], and the
unbounded metrics go through a max-shifted log-sum-exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvariantViolation, ZeroNormVector


@dataclass
class ContrastiveBatchItem:
    """Anchor, its pseudo-gold positive, and the negative set (hard negative
    first, then in-batch negatives)."""

    g_anchor: np.ndarray
    g_pos: np.ndarray
    g_negs: list[np.ndarray]

    def __post_init__(self):
        if not self.g_negs:
            raise InvariantViolation("contrastive item needs at least one negative")
        n = len(self.g_anchor)
        if len(self.g_pos) != n or any(len(g) != n for g in self.g_negs):
            raise DimensionMismatch("contrastive item vectors disagree in length")


@dataclass
class LossOutput:
    """Scalar loss plus gradients for every participating vector."""

    value: float
    d_anchor: np.ndarray
    d_pos: np.ndarray
    d_negs: list[np.ndarray]


@dataclass
class CrossEntropyOutput:
    value: float
    d_logit: float
    p: float


def _sim_and_grads(a: np.ndarray, b: np.ndarray, metric: str
                   ) -> tuple[float, np.ndarray, np.ndarray]:
    """Similarity plus its gradients with respect to both vectors."""
    if metric == "cosine":
        na = np.linalg.norm(a)
        nb = np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise ZeroNormVector("cosine similarity of a zero-norm vector")
        c = float(a @ b / (na * nb))
        da = b / (na * nb) - c * a / (na * na)
        db = a / (na * nb) - c * b / (nb * nb)
        return c, da, db
    if metric == "inner_product":
        return float(a @ b), b.astype(np.float64), a.astype(np.float64)
    if metric == "neg_l2":
        d = a - b
        return float(-(d @ d)), -2.0 * d, 2.0 * d
    raise DimensionMismatch(f"unknown metric {metric!r}")


def nll_from_sims(s_pos: float, s_negs: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Softmax NLL of the positive against the negatives.

    Returns (loss, dloss/ds_pos, dloss/ds_negs). With all similarities equal
    the loss is exactly ln(m + 1) for m negatives.
    """
    s_negs = np.asarray(s_negs, dtype=np.float64)
    m = float(max(s_pos, s_negs.max()))
    exp_pos = math.exp(s_pos - m)
    exp_negs = np.exp(s_negs - m)
    z = exp_pos + float(exp_negs.sum())
    loss = math.log(z) - (s_pos - m)
    p_pos = exp_pos / z
    p_negs = exp_negs / z
    return loss, p_pos - 1.0, p_negs


def rgcll(item: ContrastiveBatchItem, metric: str) -> LossOutput:
    """-log( e^{s+} / (e^{s+} + sum_j e^{s_j-}) ); gradients flow to the
    anchor, the positive, and all negatives."""
    a = np.asarray(item.g_anchor, dtype=np.float64)
    s_pos, dpos_da, dpos_dp = _sim_and_grads(a, np.asarray(item.g_pos, np.float64), metric)
    neg_sims = np.zeros(len(item.g_negs))
    neg_grads = []
    for j, gn in enumerate(item.g_negs):
        s, da, dn = _sim_and_grads(a, np.asarray(gn, np.float64), metric)
        neg_sims[j] = s
        neg_grads.append((da, dn))
    loss, dl_dspos, dl_dsnegs = nll_from_sims(s_pos, neg_sims)
    d_anchor = dl_dspos * dpos_da
    d_negs = []
    for j, (da, dn) in enumerate(neg_grads):
        d_anchor = d_anchor + dl_dsnegs[j] * da
        d_negs.append(dl_dsnegs[j] * dn)
    return LossOutput(loss, d_anchor, dl_dspos * dpos_dp, d_negs)


def triplet(g_anchor: np.ndarray, g_pos: np.ndarray, g_neg: np.ndarray,
            margin: float, metric: str) -> LossOutput:
    """Hinge max(0, margin - sim(a,p) + sim(a,n)); the inactive region
    (including the boundary) has zero loss and zero gradients."""
    a = np.asarray(g_anchor, dtype=np.float64)
    p = np.asarray(g_pos, dtype=np.float64)
    n = np.asarray(g_neg, dtype=np.float64)
    s_pos, dpos_da, dpos_dp = _sim_and_grads(a, p, metric)
    s_neg, dneg_da, dneg_dn = _sim_and_grads(a, n, metric)
    h = margin - s_pos + s_neg
    if h <= 0.0:
        zero = np.zeros_like(a)
        return LossOutput(0.0, zero, zero.copy(), [zero.copy()])
    return LossOutput(h, dneg_da - dpos_da, -dpos_dp, [dneg_dn])


def cross_entropy(logit: float, y: int) -> CrossEntropyOutput:
    """Binary cross-entropy computed from the logit in the numerically stable
    form softplus(logit) - y*logit; the gradient is sigma(logit) - y."""
    z = float(logit)
    softplus = max(z, 0.0) + math.log1p(math.exp(-abs(z)))
    if z >= 0:
        p = 1.0 / (1.0 + math.exp(-z))
    else:
        e = math.exp(z)
        p = e / (1.0 + e)
    return CrossEntropyOutput(softplus - y * z, p - float(y), p)


def joint_loss(rgcll_value: float, ce_value: float, lambda_rgcll: float) -> float:
    """lambda * contrastive + cross-entropy; lambda = 0 is the CE-only
    baseline, lambda = inf disables the CE term (contrastive alone)."""
    if lambda_rgcll < 0:
        raise DimensionMismatch(f"lambda must be >= 0, got {lambda_rgcll}")
    w_r, w_c = joint_weights(lambda_rgcll)
    return w_r * rgcll_value + w_c * ce_value


def joint_weights(lambda_rgcll: float) -> tuple[float, float]:
    """(contrastive weight, cross-entropy weight) for the joint objective."""
    if math.isinf(lambda_rgcll):
        return 1.0, 0.0
    return lambda_rgcll, 1.0
