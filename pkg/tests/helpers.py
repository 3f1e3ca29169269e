"""Shared test utilities: finite-difference oracles and tiny graph builders."""

from __future__ import annotations

import numpy as np

from graphalp.graph import Graph


def numeric_grad(f, arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of the scalar ``f()`` w.r.t. ``arr`` in place.

    Indexes ``arr`` elementwise (never through ``ravel``) so it also works on
    non-contiguous views such as transposed weight matrices.
    """
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + eps
        hi = f()
        arr[idx] = orig - eps
        lo = f()
        arr[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * eps)
    return grad


def rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    """Max elementwise |a - b| / max(|a|, |b|, 1)."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(approx), np.abs(exact)), 1.0)
    return float((np.abs(approx - exact) / denom).max())


def away_from_zero(rng: np.random.Generator, shape, margin: float = 0.25) -> np.ndarray:
    """Standard normal draws pushed ``margin`` away from 0 (clear of ReLU kinks)."""
    x = rng.standard_normal(shape)
    return x + margin * np.sign(x)


def grad_check(loss_fn, tensors, eps: float = 1e-6) -> float:
    """Worst relative error between tape gradients and central differences.

    ``loss_fn`` rebuilds the forward pass from the tensors' current values and
    returns the scalar loss Tensor; ``tensors`` are the leaves to check.
    """
    for t in tensors:
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy()
        numeric = numeric_grad(lambda: loss_fn().item(), t.values, eps)
        worst = max(worst, rel_err(analytic, numeric))
    return worst


def random_edges(rng: np.random.Generator, num_nodes: int, p: float = 0.3):
    edges = []
    for i in range(num_nodes):
        for j in range(i + 1, num_nodes):
            if rng.random() < p:
                edges.append((i, j))
    return tuple(edges)


def tiny_graph(seed: int = 0, num_nodes: int = 12, num_classes: int = 3,
               num_features: int = 4, labeled_per_class: int = 3) -> Graph:
    """Small fully deterministic labeled graph with train/val/test masks."""
    rng = np.random.default_rng(seed)
    labels = np.arange(num_nodes) % num_classes
    centers = np.zeros((num_classes, num_features))
    for c in range(num_classes):
        centers[c, c % num_features] = 2.0
    features = centers[labels] + rng.standard_normal((num_nodes, num_features))
    edges = random_edges(rng, num_nodes, p=0.3)
    per_class: dict[int, list[int]] = {c: [] for c in range(num_classes)}
    for i in range(num_nodes):
        per_class[int(labels[i])].append(i)
    train, val, test = [], [], []
    for c in range(num_classes):
        members = per_class[c]
        train.extend(members[:labeled_per_class])
        if len(members) > labeled_per_class:
            val.append(members[labeled_per_class])
        if len(members) > labeled_per_class + 1:
            test.append(members[labeled_per_class + 1])
    return Graph(num_nodes=num_nodes, features=features, edges=edges,
                 labels=labels.astype(np.int64), num_classes=num_classes,
                 train_mask=tuple(train), val_mask=tuple(val), test_mask=tuple(test))
