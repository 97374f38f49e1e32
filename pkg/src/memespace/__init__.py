"""memespace: a retrieval-guided contrastive embedding engine for meme
classification over precomputed vision/text feature vectors."""

from . import errors
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    EmbeddingDataset,
    EmbeddingRecord,
    RunConfig,
    SynthSpec,
    gen_synthetic_confounders,
    load_config,
    load_dataset,
    load_sidecar,
    save_dataset,
    save_sidecar,
    validate_for_training,
)
from .encoder import ClassifierHead, VlEncoderParams, encode, encode_backward, init_params, predict_prob
from .evaluation import Metrics, accuracy, auroc, evaluate_knn, evaluate_logistic, f1, knn_predict
from .losses import ContrastiveBatchItem, LossOutput, cross_entropy, joint_loss, rgcll, triplet
from .retrieval import (
    DenseIndex,
    Neighbor,
    SparseIndex,
    bm25_build,
    bm25_topk,
    build_dense_index,
    hard_negative,
    pseudo_gold,
    query_topk,
    similarity,
)
from .trainer import EpochReport, TrainState, in_batch_negatives, make_batches, train, train_epoch

__version__ = "0.1.0"
