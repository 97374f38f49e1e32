"""The trainable joint vision-language head and the logistic classifier.

Per record the head computes

    g = PreOutput( dropout(img_proj(f_img)) * dropout(txt_proj(f_txt)) )

where * is the element-wise (Hadamard) fusion, each projection is a linear
layer followed by dropout, and PreOutput is (Linear -> ReLU -> Dropout)
repeated ``pre_output_layers - 1`` times followed by one final linear layer.
The final layer stays linear so g keeps unconstrained sign for cosine
similarity; g is never normalized here (the retrieval metric decides).
Dropout is active only in train mode; eval mode is a pure function and
consumes no randomness.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import EmbeddingDataset, RunConfig
from .errors import DimensionMismatch, InvariantViolation
from .neural import LinearLayer, dropout, init_linear, linear_backward, linear_forward, relu_backward, relu_forward


@dataclass
class VlEncoderParams:
    img_proj: LinearLayer
    txt_proj: LinearLayer
    pre_output: list[LinearLayer]
    dropout_rate: float

    @property
    def n(self) -> int:
        return self.img_proj.out_dim

    @property
    def d_img(self) -> int:
        return self.img_proj.in_dim

    @property
    def d_txt(self) -> int:
        return self.txt_proj.in_dim


@dataclass
class ClassifierHead:
    w: np.ndarray
    b: np.ndarray  # 0-d array

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(())


def init_params(rng: np.random.Generator, d_img: int, d_txt: int, config: RunConfig
                ) -> tuple[VlEncoderParams, ClassifierHead]:
    """Seeded init; draw order is projections, pre-output stack, then head."""
    n = config.projection_dim
    img_proj = init_linear(rng, n, d_img)
    txt_proj = init_linear(rng, n, d_txt)
    pre_output = [init_linear(rng, n, n) for _ in range(config.pre_output_layers)]
    bound = 1.0 / np.sqrt(n)
    head = ClassifierHead(rng.uniform(-bound, bound, size=n), np.float64(0.0))
    return VlEncoderParams(img_proj, txt_proj, pre_output, config.dropout_rate), head


# Canonical parameter ordering, shared by the optimizer and the checkpoint.
def param_dict(params: VlEncoderParams, head: ClassifierHead) -> dict[str, np.ndarray]:
    out = {"img_proj.W": params.img_proj.W, "img_proj.b": params.img_proj.b,
           "txt_proj.W": params.txt_proj.W, "txt_proj.b": params.txt_proj.b}
    for i, layer in enumerate(params.pre_output):
        out[f"pre_output.{i}.W"] = layer.W
        out[f"pre_output.{i}.b"] = layer.b
    out["head.w"] = head.w
    out["head.b"] = head.b
    return out


def zero_grads_like(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(p) for k, p in params.items()}


@dataclass
class ForwardCache:
    """Everything the backward pass replays: inputs, pre-activations, and the
    dropout scale masks of one train- or eval-mode forward."""

    train: bool
    f_img: np.ndarray
    f_txt: np.ndarray
    u: np.ndarray              # post-dropout image projection
    v: np.ndarray              # post-dropout text projection
    img_mask: np.ndarray
    txt_mask: np.ndarray
    hidden_inputs: list[np.ndarray]   # input to each pre-output layer
    hidden_pre: list[np.ndarray]      # pre-activations of the hidden layers
    hidden_masks: list[np.ndarray]


def encode(f_img: np.ndarray, f_txt: np.ndarray, params: VlEncoderParams,
           train: bool = False, rng: np.random.Generator | None = None
           ) -> tuple[np.ndarray, ForwardCache]:
    f_img = np.asarray(f_img, dtype=np.float64)
    f_txt = np.asarray(f_txt, dtype=np.float64)
    if f_img.shape != (params.d_img,) or f_txt.shape != (params.d_txt,):
        raise DimensionMismatch(
            f"encode inputs {f_img.shape}/{f_txt.shape} != ({params.d_img},)/({params.d_txt},)")
    p = params.dropout_rate
    u, img_mask = dropout(linear_forward(f_img, params.img_proj), p, train, rng)
    v, txt_mask = dropout(linear_forward(f_txt, params.txt_proj), p, train, rng)
    x = u * v
    hidden_inputs, hidden_pre, hidden_masks = [], [], []
    for layer in params.pre_output[:-1]:
        hidden_inputs.append(x)
        z = linear_forward(x, layer)
        hidden_pre.append(z)
        x, mask = dropout(relu_forward(z), p, train, rng)
        hidden_masks.append(mask)
    hidden_inputs.append(x)
    g = linear_forward(x, params.pre_output[-1])
    cache = ForwardCache(train, f_img, f_txt, u, v, img_mask, txt_mask,
                         hidden_inputs, hidden_pre, hidden_masks)
    return g, cache


def encode_backward(cache: ForwardCache, params: VlEncoderParams, dg: np.ndarray
                    ) -> dict[str, np.ndarray]:
    """Chain rule back through the head stack; Hadamard fusion contributes
    d(u*v)/du = v and d(u*v)/dv = u. Returns encoder-parameter gradients."""
    if len(cache.hidden_inputs) != len(params.pre_output):
        raise InvariantViolation("cache does not match the layer stack that produced it")
    grads: dict[str, np.ndarray] = {}
    last = len(params.pre_output) - 1
    dx, dW, db = linear_backward(cache.hidden_inputs[last], params.pre_output[last],
                                 np.asarray(dg, dtype=np.float64))
    grads[f"pre_output.{last}.W"] = dW
    grads[f"pre_output.{last}.b"] = db
    for i in range(last - 1, -1, -1):
        dz = relu_backward(cache.hidden_pre[i], dx * cache.hidden_masks[i])
        dx, dW, db = linear_backward(cache.hidden_inputs[i], params.pre_output[i], dz)
        grads[f"pre_output.{i}.W"] = dW
        grads[f"pre_output.{i}.b"] = db
    du = dx * cache.v * cache.img_mask
    dv = dx * cache.u * cache.txt_mask
    _, dW, db = linear_backward(cache.f_img, params.img_proj, du)
    grads["img_proj.W"] = dW
    grads["img_proj.b"] = db
    _, dW, db = linear_backward(cache.f_txt, params.txt_proj, dv)
    grads["txt_proj.W"] = dW
    grads["txt_proj.b"] = db
    return grads


def predict_prob(g: np.ndarray, head: ClassifierHead) -> float:
    return 1.0 / (1.0 + np.exp(-predict_logit(g, head)))


def predict_logit(g: np.ndarray, head: ClassifierHead) -> float:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != head.w.shape:
        raise DimensionMismatch(f"head input {g.shape} != {head.w.shape}")
    return float(head.w @ g + head.b)


def encode_dataset(ds: EmbeddingDataset, params: VlEncoderParams, threads: int = 1) -> np.ndarray:
    """Eval-mode embeddings for every record, rows in dataset order.

    Each row is an independent pure computation, so fanning out over worker
    threads keeps the output bitwise identical to the single-threaded scan.
    """
    if ds.d_img != params.d_img or ds.d_txt != params.d_txt:
        raise DimensionMismatch(
            f"dataset dims ({ds.d_img}, {ds.d_txt}) != encoder dims ({params.d_img}, {params.d_txt})")
    out = np.zeros((len(ds), params.n), dtype=np.float64)

    def run(i: int) -> None:
        g, _ = encode(ds.f_img[i], ds.f_txt[i], params, train=False)
        out[i] = g

    if threads <= 1 or len(ds) < 2:
        for i in range(len(ds)):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(len(ds))))
    return out
