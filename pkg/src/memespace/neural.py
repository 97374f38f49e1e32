"""Dense numerical primitives with explicit backward passes.

Everything computes in float64; the file formats stay float32. All functions
are deterministic given the RNG they are handed, and dropout is the only
consumer of randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFiniteGradient

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class LinearLayer:
    """y = W x + b with W of shape (out, in)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionMismatch(f"linear layer shapes W{self.W.shape} b{self.b.shape}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]


def init_linear(rng: np.random.Generator, out_dim: int, in_dim: int) -> LinearLayer:
    # weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero so a
    # fresh encoder is input-driven rather than bias-dominated
    bound = 1.0 / np.sqrt(in_dim)
    W = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return LinearLayer(W, np.zeros(out_dim))


def linear_forward(x: np.ndarray, layer: LinearLayer) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (layer.in_dim,):
        raise DimensionMismatch(f"linear input {x.shape} != ({layer.in_dim},)")
    return layer.W @ x + layer.b


def linear_backward(x: np.ndarray, layer: LinearLayer, dy: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dW, db) for y = W x + b."""
    x = np.asarray(x, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    if x.shape != (layer.in_dim,) or dy.shape != (layer.out_dim,):
        raise DimensionMismatch(f"linear backward shapes x{x.shape} dy{dy.shape}")
    return layer.W.T @ dy, np.outer(dy, x), dy.copy()


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """dx given the pre-activation x; the kink at 0 takes the zero branch."""
    return np.where(np.asarray(x) > 0.0, np.asarray(dy, dtype=np.float64), 0.0)


def dropout(x: np.ndarray, p: float, train: bool, rng: np.random.Generator | None
            ) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. Returns (output, scale_mask); backward is dy * mask.

    Train mode zeroes each unit with probability p and scales survivors by
    1/(1-p). Eval mode (and p=0) is the identity and consumes no randomness.
    """
    x = np.asarray(x, dtype=np.float64)
    if not (0.0 <= p < 1.0):
        raise DimensionMismatch(f"dropout rate {p} outside [0, 1)")
    if not train or p == 0.0:
        return x.copy(), np.ones_like(x)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def clip_gradients(grads: dict[str, np.ndarray], c: float) -> dict[str, np.ndarray]:
    """Element-wise clamp of every gradient entry into [-c, c]. Idempotent."""
    if not c > 0:
        raise DimensionMismatch(f"clip value {c} must be > 0")
    return {k: np.clip(g, -c, c) for k, g in grads.items()}


def clip_gradients_norm(grads: dict[str, np.ndarray], c: float) -> dict[str, np.ndarray]:
    """Global-norm alternative: rescale all gradients when their joint L2 norm
    exceeds c."""
    if not c > 0:
        raise DimensionMismatch(f"clip value {c} must be > 0")
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= c:
        return {k: g.copy() for k, g in grads.items()}
    scale = c / total
    return {k: g * scale for k, g in grads.items()}


@dataclass
class AdamWState:
    """Decoupled-weight-decay Adam moments, keyed like the parameter dict."""

    learning_rate: float
    weight_decay: float
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray], learning_rate: float,
             weight_decay: float) -> "AdamWState":
        return cls(learning_rate=learning_rate, weight_decay=weight_decay,
                   m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState) -> None:
    """One in-place AdamW update: decoupled decay, bias-corrected moments."""
    for key, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {key!r}")
        if g.shape != params[key].shape:
            raise DimensionMismatch(f"gradient shape {g.shape} != param {params[key].shape} for {key!r}")
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        if state.weight_decay != 0.0:
            p *= 1.0 - state.learning_rate * state.weight_decay
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
