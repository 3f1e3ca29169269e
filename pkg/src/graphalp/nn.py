"""Layers, losses and the optimizer shared by the pre-training and fine-tuning stages.

Everything trains through the tape in :mod:`graphalp.autodiff`. Losses are sums
over the selected rows (not means); Adam's per-parameter normalization absorbs
the scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BCE_EPS = 1e-7

_ACTIVATIONS = ("relu", "identity")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _check_activation(name: str) -> str:
    if name not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}, expected one of {_ACTIVATIONS}")
    return name


@dataclass
class MlpParams:
    """Stacked dense layers: weights[i] is (in_i, out_i), biases[i] is (1, out_i)."""

    weights: list[Tensor]
    biases: list[Tensor]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must align")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (1, w.shape[1]):
                raise ValueError(f"bias {b.shape} does not match weight {w.shape}")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ValueError("consecutive layer dimensions must chain")
        for a in self.activations:
            _check_activation(a)

    @classmethod
    def create(cls, dims: list[int], rng: np.random.Generator,
               output_activation: str = "identity") -> "MlpParams":
        """Dense stack over ``dims`` with ReLU on hidden layers."""
        weights, biases, acts = [], [], []
        for k in range(len(dims) - 1):
            weights.append(Tensor(glorot_uniform(rng, dims[k], dims[k + 1]), requires_grad=True))
            biases.append(Tensor(np.zeros((1, dims[k + 1])), requires_grad=True))
            acts.append("relu" if k < len(dims) - 2 else output_activation)
        return cls(weights, biases, acts)

    def parameters(self, prefix: str = "mlp") -> dict[str, Tensor]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{k}"] = w
            out[f"{prefix}.b{k}"] = b
        return out


@dataclass
class GraphSageParams:
    """One graph layer: weight maps concat(self, neighbor mean) to the output dim."""

    weight: Tensor  # (out_dim, 2 * in_dim)
    activation: str = "relu"

    def __post_init__(self):
        if self.weight.shape[1] % 2 != 0:
            raise ValueError("weight column count must be 2 x input feature dim")
        _check_activation(self.activation)

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
               activation: str = "relu") -> "GraphSageParams":
        w = glorot_uniform(rng, 2 * in_dim, out_dim).T
        return cls(Tensor(w, requires_grad=True), activation)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1] // 2

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def parameters(self, prefix: str = "sage") -> dict[str, Tensor]:
        return {f"{prefix}.w": self.weight}


def mlp_forward(params: MlpParams, x: Tensor) -> Tensor:
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match first layer {params.weights[0].shape}"
        )
    out = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        out = ad.add(ad.matmul(out, w), b)
        if act == "relu":
            out = ad.relu(out)
    return out


def graphsage_forward(params: GraphSageParams, x: Tensor, adj_norm: np.ndarray) -> Tensor:
    """Graph layer on a row-normalized adjacency: act(concat(x, adj_norm @ x) @ W.T)."""
    n = x.shape[0]
    if adj_norm.shape != (n, n):
        raise ValueError(f"adjacency {adj_norm.shape} does not match {n} rows")
    if x.shape[1] != params.in_dim:
        raise ValueError(f"input width {x.shape[1]} does not match layer dim {params.in_dim}")
    aggregated = ad.matmul(Tensor(adj_norm), x)
    combined = ad.concat_cols(x, aggregated)
    out = ad.matmul(combined, ad.transpose(params.weight))
    if params.activation == "relu":
        out = ad.relu(out)
    return out


def sigmoid_inner_product(h: Tensor) -> Tensor:
    """Symmetric (n, n) edge-probability matrix sigma(h @ h.T), entries in (0, 1)."""
    return ad.sigmoid(ad.matmul(h, ad.transpose(h)))


def frobenius_loss(xhat: Tensor, x: Tensor) -> Tensor:
    if xhat.shape != x.shape:
        raise ValueError(f"shape mismatch {xhat.shape} vs {x.shape}")
    diff = ad.sub(xhat, x)
    return ad.sum_all(ad.mul(diff, diff))


def softmax(values: np.ndarray) -> np.ndarray:
    """Row softmax of a plain array (not on the tape)."""
    shifted = values - values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def weighted_cross_entropy(logits: Tensor, labels, weights) -> Tensor:
    """Sum over rows of w[y_i] * (-log softmax(logits)_i[y_i])."""
    y = np.asarray(labels, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    k = logits.shape[1]
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    if w.shape != (k,):
        raise ValueError(f"weights must have length {k}")
    if y.shape[0] != logits.shape[0]:
        raise ValueError("one label per logits row required")

    shifted = logits.values - logits.values.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    row_w = w[y]
    loss = -(row_w * log_probs[np.arange(y.size), y]).sum()

    def backward(g):
        probs = np.exp(log_probs)
        grad = probs * row_w[:, None]
        grad[np.arange(y.size), y] -= row_w
        return ((logits, grad * float(g[0, 0])),)

    return ad._make(np.array([[loss]]), (logits,), backward)


def binary_cross_entropy(scores: Tensor, targets) -> Tensor:
    """Two-sided BCE summed over entries; scores are post-sigmoid in (0, 1).

    Scores are clamped to [eps, 1-eps] so saturated predictions stay finite;
    clamped entries get zero gradient.
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != scores.shape:
        t = t.reshape(scores.shape)
    clamped = np.clip(scores.values, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(t * np.log(clamped) + (1.0 - t) * np.log(1.0 - clamped)).sum()
    inside = (scores.values > BCE_EPS) & (scores.values < 1.0 - BCE_EPS)

    def backward(g):
        grad = (-t / clamped + (1.0 - t) / (1.0 - clamped)) * inside
        return ((scores, grad * float(g[0, 0])),)

    return ad._make(np.array([[loss]]), (scores,), backward)


def cosine_similarity(a, b) -> float:
    """Cosine of two vectors in [-1, 1]; zero vectors compare as 0."""
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.shape != bv.shape:
        raise ValueError(f"length mismatch {av.shape} vs {bv.shape}")
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(av @ bv / (na * nb), -1.0, 1.0))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between rows of a and rows of b."""
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    an = np.divide(a, na, out=np.zeros_like(a, dtype=np.float64), where=na > 0)
    bn = np.divide(b, nb, out=np.zeros_like(b, dtype=np.float64), where=nb > 0)
    return np.clip(an @ bn.T, -1.0, 1.0)


@dataclass
class AdamState:
    """Adam with bias correction and decoupled multiplicative weight decay."""

    lr: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor],
              grads: dict[str, np.ndarray] | None = None) -> None:
    """One in-place update; gradients default to each tensor's accumulated .grad."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1**t)
        v_hat = state.v[name] / (1 - state.beta2**t)
        if state.weight_decay:
            p.values *= 1.0 - state.lr * state.weight_decay
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def save_params(path, params: dict[str, Tensor]) -> None:
    """Checkpoint as a flat JSON map name -> {shape, row-major values}."""
    payload = {
        name: {"shape": list(p.shape), "values": p.values.ravel().tolist()}
        for name, p in params.items()
    }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_params(path, params: dict[str, Tensor]) -> None:
    """Load a checkpoint produced by :func:`save_params` into existing tensors."""
    payload = json.loads(Path(path).read_text())
    for name, p in params.items():
        if name not in payload:
            raise KeyError(f"checkpoint is missing parameter {name!r}")
        rec = payload[name]
        if tuple(rec["shape"]) != p.shape:
            raise ValueError(f"checkpoint shape {rec['shape']} != {p.shape} for {name!r}")
        p.values = np.array(rec["values"], dtype=np.float64).reshape(p.shape)
