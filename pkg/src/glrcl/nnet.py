"""Trainable MLP classifier head with exact backprop and AdamW updates.

The head sits above a frozen feature extractor: inputs are precomputed
feature rows, hidden layers use ReLU, the output layer is linear, and the
loss is mean cross-entropy.  Gradients are computed analytically; there is
no autodiff machinery here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidArchitecture,
    LabelOutOfRange,
    MalformedGenerator,
    ShapeMismatch,
)
from .tensor import Rng

MODEL_MAGIC = b"GLRM"
MODEL_VERSION = 1


@dataclass
class MlpHead:
    """Parameters theta_t of the classifier head.

    weights[i] has shape (fan_out, fan_in); biases[i] has shape (fan_out,).
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]


@dataclass
class HeadConfig:
    """Classifier-head hyperparameters surfaced in experiment configs."""

    hidden_dims: tuple[int, ...] = (512, 256, 128, 64, 32)
    lr: float = 1e-3
    weight_decay: float = 1e-2


def init(layer_dims, rng: Rng) -> MlpHead:
    """Kaiming-style scaled-uniform weights (bound sqrt(6/fan_in)), zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise InvalidArchitecture(f"need >= 2 positive layer dims, got {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        u = rng.uniform(fan_out * fan_in).reshape(fan_out, fan_in)
        weights.append((2.0 * u - 1.0) * bound)
        biases.append(np.zeros(fan_out))
    return MlpHead(layer_dims=dims, weights=weights, biases=biases)


def _forward_cached(m: MlpHead, x: np.ndarray):
    acts = [x]
    h = x
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return h, acts


def forward(m: MlpHead, batch: np.ndarray) -> np.ndarray:
    """Logits for a batch of feature rows."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise DimensionMismatch(
            f"batch shape {x.shape} incompatible with input dim {m.input_dim}"
        )
    logits, _ = _forward_cached(m, x)
    return logits


def loss_and_grad(m: MlpHead, batch: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and exact gradients, log-sum-exp stabilized.

    Returns (loss, (weight_grads, bias_grads)) with gradients shaped like
    the corresponding parameters.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise DimensionMismatch(
            f"batch shape {x.shape} incompatible with input dim {m.input_dim}"
        )
    y = np.asarray(labels)
    n = x.shape[0]
    c = m.num_classes
    if y.shape != (n,):
        raise DimensionMismatch(f"expected {n} labels, got shape {y.shape}")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")

    logits, acts = _forward_cached(m, x)
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.sum(np.exp(logits - zmax), axis=1, keepdims=True))
    logp = logits - lse
    loss = float(-np.mean(logp[np.arange(n), y]))

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    wgrads = [None] * len(m.weights)
    bgrads = [None] * len(m.biases)
    for i in range(len(m.weights) - 1, -1, -1):
        wgrads[i] = delta.T @ acts[i]
        bgrads[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ m.weights[i]) * (acts[i] > 0.0)
    return loss, (wgrads, bgrads)


def predict(m: MlpHead, batch: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(forward(m, batch), axis=1)


@dataclass
class AdamWState:
    """First/second-moment accumulators plus the decoupled-decay settings."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_model(cls, model: MlpHead, lr: float = 1e-3,
                  weight_decay: float = 1e-2) -> "AdamWState":
        return cls(
            lr=lr,
            weight_decay=weight_decay,
            m_w=[np.zeros_like(w) for w in model.weights],
            v_w=[np.zeros_like(w) for w in model.weights],
            m_b=[np.zeros_like(b) for b in model.biases],
            v_b=[np.zeros_like(b) for b in model.biases],
        )


def adamw_step(m: MlpHead, state: AdamWState, grads) -> tuple[MlpHead, AdamWState]:
    """One decoupled-weight-decay Adam update, in place.

    param <- param - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * param)
    with bias-corrected moments; decay is not applied to biases.
    """
    wgrads, bgrads = grads
    if len(wgrads) != len(m.weights) or len(bgrads) != len(m.biases):
        raise ShapeMismatch("gradient list lengths differ from parameters")
    for g, p in zip(wgrads, m.weights):
        if g.shape != p.shape:
            raise ShapeMismatch(f"weight grad {g.shape} vs param {p.shape}")
    for g, p in zip(bgrads, m.biases):
        if g.shape != p.shape:
            raise ShapeMismatch(f"bias grad {g.shape} vs param {p.shape}")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for i in range(len(m.weights)):
        for p, g, mom, vel, decay in (
            (m.weights[i], wgrads[i], state.m_w[i], state.v_w[i], state.weight_decay),
            (m.biases[i], bgrads[i], state.m_b[i], state.v_b[i], 0.0),
        ):
            mom *= state.beta1
            mom += (1.0 - state.beta1) * g
            vel *= state.beta2
            vel += (1.0 - state.beta2) * g * g
            update = (mom / bc1) / (np.sqrt(vel / bc2) + state.eps)
            if decay:
                update = update + decay * p
            p -= state.lr * update
    return m, state


# ---------------------------------------------------------------------------
# Checkpoint format (".mlp"), little-endian:
#   magic "GLRM" | version u32 | dim count u32 | dims u32 each
#   | per affine layer: weights (out*in f64) then bias (out f64).
# ---------------------------------------------------------------------------


def serialize_model(m: MlpHead) -> bytes:
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(m.layer_dims))]
    parts.append(struct.pack(f"<{len(m.layer_dims)}I", *m.layer_dims))
    for w, b in zip(m.weights, m.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def deserialize_model(buf: bytes) -> MlpHead:
    if len(buf) < 12 or buf[:4] != MODEL_MAGIC:
        raise MalformedGenerator("bad model magic")
    version, ndims = struct.unpack_from("<II", buf, 4)
    if version != MODEL_VERSION:
        raise MalformedGenerator(f"unsupported model version {version}")
    if ndims < 2:
        raise MalformedGenerator("model needs >= 2 layer dims")
    pos = 12
    if len(buf) < pos + 4 * ndims:
        raise MalformedGenerator("truncated dims")
    dims = struct.unpack_from(f"<{ndims}I", buf, pos)
    if any(d < 1 for d in dims):
        raise MalformedGenerator("non-positive layer dim")
    pos += 4 * ndims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        need = (fan_out * fan_in + fan_out) * 8
        if len(buf) - pos < need:
            raise MalformedGenerator("truncated parameters")
        w = np.frombuffer(buf, dtype="<f8", count=fan_out * fan_in, offset=pos)
        pos += fan_out * fan_in * 8
        b = np.frombuffer(buf, dtype="<f8", count=fan_out, offset=pos)
        pos += fan_out * 8
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    if pos != len(buf):
        raise MalformedGenerator(f"{len(buf) - pos} trailing bytes")
    return MlpHead(layer_dims=tuple(dims), weights=weights, biases=biases)
