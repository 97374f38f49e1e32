"""The retrieval-guided contrastive training loop.

Within one epoch, pseudo-gold/hard-negative SELECTION reads only the
epoch-start index snapshot; the loss itself is computed on current-parameter
embeddings. The index is rebuilt in eval mode exactly once per epoch, never
mid-epoch, and an initial index exists before the first step.

Selected records are re-encoded in train mode with the current parameters so
gradients flow through them; ``detach_retrieved`` instead reuses the stale
snapshot vectors as constants. When the contrastive weight is zero the whole
retrieval path (including its dropout-mask draws) is skipped, so the
parameter trajectory is identical to a run with retrieval disabled.
"""

from __future__ import annotations

import copy
import json
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .data import EmbeddingDataset, RunConfig, validate_for_training
from .encoder import (
    ClassifierHead,
    VlEncoderParams,
    encode,
    encode_backward,
    encode_dataset,
    init_params,
    param_dict,
    predict_logit,
    zero_grads_like,
)
from .errors import ClassUnderpopulated, DimensionMismatch, NonFiniteLoss
from .evaluation import accuracy, auroc
from .losses import (
    ContrastiveBatchItem,
    LossOutput,
    cross_entropy,
    joint_weights,
    rgcll,
    triplet,
)
from .neural import AdamWState, adamw_step, clip_gradients, clip_gradients_norm
from .retrieval import DenseIndex, build_dense_index, query_topk


@dataclass
class EpochReport:
    epoch: int
    mean_joint_loss: float
    mean_rgcll: float
    mean_ce: float
    dev_auroc: float
    dev_accuracy: float
    wall_seconds: float

    def to_json_line(self) -> str:
        # wall-clock time stays out of the serialized history so that two
        # identically seeded runs emit byte-identical files
        return json.dumps({
            "epoch": self.epoch,
            "mean_joint_loss": self.mean_joint_loss,
            "mean_rgcll": self.mean_rgcll,
            "mean_ce": self.mean_ce,
            "dev_auroc": round(self.dev_auroc, 4),
            "dev_accuracy": round(self.dev_accuracy, 4),
        }, sort_keys=True)


@dataclass
class TrainState:
    params: VlEncoderParams
    head: ClassifierHead
    adamw: AdamWState
    index: DenseIndex
    epoch: int
    rng: np.random.Generator
    best_epoch: int = 0
    best_auroc: float = -1.0
    best_params: VlEncoderParams | None = None
    best_head: ClassifierHead | None = None


def make_batches(n_records: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform shuffle of 0..n-1 split into consecutive chunks; the last chunk
    may be short."""
    if batch_size < 2:
        raise DimensionMismatch(f"batch_size must be >= 2, got {batch_size}")
    perm = rng.permutation(n_records)
    return [perm[i:i + batch_size] for i in range(0, n_records, batch_size)]


def in_batch_negatives(batch_labels: list[int] | np.ndarray, i: int) -> list[int]:
    """Positions j != i whose label differs from position i's, in batch order."""
    li = batch_labels[i]
    return [j for j, lj in enumerate(batch_labels) if j != i and lj != li]


def _contrastive_term(item: ContrastiveBatchItem, config: RunConfig) -> LossOutput:
    if config.loss_kind == "nll":
        return rgcll(item, config.sim_metric)
    # triplet: one hinge per negative, averaged, so in-batch negatives still
    # contribute under the alternative loss
    m = len(item.g_negs)
    value = 0.0
    d_anchor = np.zeros_like(item.g_anchor, dtype=np.float64)
    d_pos = np.zeros_like(item.g_anchor, dtype=np.float64)
    d_negs = []
    for gn in item.g_negs:
        out = triplet(item.g_anchor, item.g_pos, gn, config.triplet_margin, config.sim_metric)
        value += out.value / m
        d_anchor += out.d_anchor / m
        d_pos += out.d_pos / m
        d_negs.append(out.d_negs[0] / m)
    return LossOutput(value, d_anchor, d_pos, d_negs)


def train_epoch(state: TrainState, train_ds: EmbeddingDataset, config: RunConfig) -> EpochReport:
    """One pass over shuffled batches followed by the eval-mode index rebuild.

    Per batch: (a) train-mode encode every member; (b) select pseudo-gold and
    hard-negative rows per anchor from the epoch-start snapshot; (c) re-encode
    the selected records with current parameters; (d) contrastive items get
    the hard negative(s) first, then in-batch negatives; (e) mean joint loss,
    backward, clip, AdamW step. Dev metrics are filled in by the caller.
    """
    t0 = time.monotonic()
    w_r, w_c = joint_weights(config.lambda_rgcll)
    rgcll_active = w_r > 0.0
    clip = clip_gradients if config.grad_clip_mode == "value" else clip_gradients_norm
    params = param_dict(state.params, state.head)
    n_total = len(train_ds)
    sum_joint = sum_rgcll = sum_ce = 0.0

    batches = make_batches(n_total, config.batch_size, state.rng)
    for batch_no, batch in enumerate(batches):
        bsz = len(batch)
        grads = zero_grads_like(params)
        gs: list[np.ndarray] = []
        caches = []
        for idx in batch:
            g, cache = encode(train_ds.f_img[idx], train_ds.f_txt[idx],
                              state.params, train=True, rng=state.rng)
            gs.append(g)
            caches.append(cache)
        batch_labels = [int(train_ds.labels[idx]) for idx in batch]

        # selection from the snapshot, then recomputation with current params
        retrieved: list[tuple[list, list]] = []
        if rgcll_active:
            for bi, idx in enumerate(batch):
                idx = int(idx)
                snapshot_q = state.index.G[idx]
                label = batch_labels[bi]
                pos_rows = query_topk(state.index, snapshot_q, config.n_pseudo_gold,
                                      exclude={idx}, label_filter=("same", label))
                neg_rows = []
                if config.n_hard_negative > 0:
                    neg_rows = query_topk(state.index, snapshot_q, config.n_hard_negative,
                                          label_filter=("opposite", label))
                def materialize(rows):
                    out = []
                    for nb in rows:
                        if config.detach_retrieved:
                            out.append((state.index.G[nb.row].copy(), None))
                        else:
                            g_r, c_r = encode(train_ds.f_img[nb.row], train_ds.f_txt[nb.row],
                                              state.params, train=True, rng=state.rng)
                            out.append((g_r, c_r))
                    return out
                retrieved.append((materialize(pos_rows), materialize(neg_rows)))

        dg_batch = [np.zeros_like(g) for g in gs]
        batch_joint = 0.0
        for bi in range(bsz):
            y = batch_labels[bi]
            ce = cross_entropy(predict_logit(gs[bi], state.head), y)
            sum_ce += ce.value
            item_joint = w_c * ce.value
            dlogit = w_c * ce.d_logit / bsz
            grads["head.w"] += dlogit * gs[bi]
            grads["head.b"] += dlogit
            dg_batch[bi] += dlogit * state.head.w

            if rgcll_active:
                pos_list, hneg_list = retrieved[bi]
                ib_rows = in_batch_negatives(batch_labels, bi)
                neg_vecs = [g for g, _ in hneg_list] + [gs[j] for j in ib_rows]
                if pos_list and neg_vecs:
                    n_pos = len(pos_list)
                    anchor_rgcll = 0.0
                    for g_pos, cache_pos in pos_list:
                        out = _contrastive_term(
                            ContrastiveBatchItem(gs[bi], g_pos, neg_vecs), config)
                        anchor_rgcll += out.value / n_pos
                        scale = w_r / (bsz * n_pos)
                        dg_batch[bi] += scale * out.d_anchor
                        if cache_pos is not None:
                            for k, v in encode_backward(cache_pos, state.params,
                                                        scale * out.d_pos).items():
                                grads[k] += v
                        for ni, dneg in enumerate(out.d_negs):
                            if ni < len(hneg_list):
                                cache_neg = hneg_list[ni][1]
                                if cache_neg is not None:
                                    for k, v in encode_backward(cache_neg, state.params,
                                                                scale * dneg).items():
                                        grads[k] += v
                            else:
                                dg_batch[ib_rows[ni - len(hneg_list)]] += scale * dneg
                    sum_rgcll += anchor_rgcll
                    item_joint += w_r * anchor_rgcll
            batch_joint += item_joint
            sum_joint += item_joint

        if not math.isfinite(batch_joint):
            raise NonFiniteLoss(
                f"non-finite loss at epoch {state.epoch + 1}, batch {batch_no} "
                f"(joint so far {sum_joint}, ce so far {sum_ce})")

        for bi in range(bsz):
            for k, v in encode_backward(caches[bi], state.params, dg_batch[bi]).items():
                grads[k] += v
        adamw_step(params, clip(grads, config.grad_clip_value), state.adamw)

    state.index = build_dense_index(train_ds, state.params, config.sim_metric)
    state.epoch += 1
    return EpochReport(state.epoch, sum_joint / n_total, sum_rgcll / n_total,
                       sum_ce / n_total, float("nan"), float("nan"),
                       time.monotonic() - t0)


def _dev_scores(dev_ds: EmbeddingDataset, params: VlEncoderParams, head: ClassifierHead,
                threads: int = 1) -> np.ndarray:
    G = encode_dataset(dev_ds, params, threads=threads)
    logits = G @ head.w + float(head.b)
    return 1.0 / (1.0 + np.exp(-logits))


def train(train_ds: EmbeddingDataset, dev_ds: EmbeddingDataset, config: RunConfig,
          threads: int = 1, log=None) -> tuple[Checkpoint, list[EpochReport]]:
    """Run every epoch, track dev AUROC after each, and keep the checkpoint of
    the best dev epoch (ties go to the earlier epoch)."""
    config.validate()
    validate_for_training(train_ds)
    if train_ds.d_img != dev_ds.d_img or train_ds.d_txt != dev_ds.d_txt:
        raise DimensionMismatch("train and dev feature dimensions disagree")
    dev_counts = dev_ds.class_counts()
    for label in (0, 1):
        if dev_counts[label] < 1:
            raise ClassUnderpopulated(label, dev_counts[label])

    rng = np.random.default_rng(config.seed)
    params, head = init_params(rng, train_ds.d_img, train_ds.d_txt, config)
    adamw = AdamWState.init(param_dict(params, head), config.learning_rate, config.weight_decay)
    index0 = build_dense_index(train_ds, params, config.sim_metric, threads=threads)
    state = TrainState(params, head, adamw, index0, 0, rng)

    dev_labels = dev_ds.labels.astype(np.int64)
    history: list[EpochReport] = []
    for _ in range(config.max_epochs):
        report = train_epoch(state, train_ds, config)
        scores = _dev_scores(dev_ds, state.params, state.head, threads=threads)
        report = replace(report,
                         dev_auroc=auroc(scores, dev_labels),
                         dev_accuracy=accuracy(scores, dev_labels))
        history.append(report)
        if report.dev_auroc > state.best_auroc:
            state.best_auroc = report.dev_auroc
            state.best_epoch = report.epoch
            state.best_params = copy.deepcopy(state.params)
            state.best_head = copy.deepcopy(state.head)
        if log is not None:
            print(f"epoch {report.epoch}/{config.max_epochs} "
                  f"joint {report.mean_joint_loss:.4f} rgcll {report.mean_rgcll:.4f} "
                  f"ce {report.mean_ce:.4f} dev_auroc {report.dev_auroc:.4f} "
                  f"({report.wall_seconds:.1f}s)", file=log)

    best = Checkpoint(config, state.best_params, state.best_head)
    return best, history


def write_history(history: list[EpochReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for report in history:
            fh.write(report.to_json_line() + "\n")
