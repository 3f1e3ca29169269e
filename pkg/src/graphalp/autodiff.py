"""Minimal reverse-mode autodiff over dense 2-D float64 arrays.

Every value on the tape is a strictly 2-D matrix; scalars are (1, 1) and
vectors are (1, d) rows. An op records its parents and a closure that maps the
upstream gradient to per-parent gradients; ``backward`` runs the tape once in
reverse topological order and accumulates into ``.grad``.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("values", "requires_grad", "_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self._grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.values[0, 0])

    def _accumulate(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64)
        else:
            self._grad = self._grad + g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Backpropagate from this node; visits each tape node exactly once."""
        if seed is None:
            seed = np.ones_like(self.values)
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(seed)
        for node in reversed(order):
            if node._backward is None or node._grad is None:
                continue
            for parent, g in node._backward(node._grad):
                if parent.requires_grad:
                    parent._accumulate(g)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    # collapse broadcast axes back to the parent's shape
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shapes {a.shape} and {b.shape} do not chain")

    def backward(g):
        return ((a, g @ b.values.T), (b, a.values.T @ g))

    return _make(a.values @ b.values, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.values + b.values, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(a.values - b.values, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return (
            (a, _unbroadcast(g * b.values, a.shape)),
            (b, _unbroadcast(g * a.values, b.shape)),
        )

    return _make(a.values * b.values, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return ((a, g * c),)

    return _make(a.values * float(c), (a,), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        return ((a, g.T),)

    return _make(a.values.T.copy(), (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0

    def backward(g):
        return ((a, g * mask),)

    return _make(a.values * mask, (a,), backward)


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Numerically stable elementwise logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_values(a.values)

    def backward(g):
        return ((a, g * s * (1.0 - s)),)

    return _make(s, (a,), backward)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"row concat needs equal widths, got {a.shape} and {b.shape}")
    na = a.shape[0]

    def backward(g):
        return ((a, g[:na]), (b, g[na:]))

    return _make(np.vstack([a.values, b.values]), (a, b), backward)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"col concat needs equal heights, got {a.shape} and {b.shape}")
    ca = a.shape[1]

    def backward(g):
        return ((a, g[:, :ca]), (b, g[:, ca:]))

    return _make(np.hstack([a.values, b.values]), (a, b), backward)


def gather_rows(a: Tensor, ids) -> Tensor:
    idx = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        return ((a, full),)

    return _make(a.values[idx], (a,), backward)


def slice_block(a: Tensor, rows: slice, cols: slice) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.values)
        full[rows, cols] = g
        return ((a, full),)

    return _make(a.values[rows, cols].copy(), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        return ((a, np.full_like(a.values, float(g[0, 0]))),)

    return _make(np.array([[a.values.sum()]]), (a,), backward)
