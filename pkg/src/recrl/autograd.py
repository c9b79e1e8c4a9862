"""Reverse-mode autodiff over numpy arrays.

A small tape engine: each op records a backward closure over its float64
result. Vectorized on purpose; a scalar-graph engine is orders of magnitude
too slow for the batched GRU scoring this package does in its inner loop.
Only the ops the policy and trainers need are implemented.

Conventions:
- everything is float64,
- gradients accumulate (+=) so shared nodes in a DAG are handled,
- ops whose inputs all have requires_grad=False build no graph,
- `minimum` routes the gradient to its first argument on exact ties,
- `clip` passes gradient only strictly inside the interval.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import TapeError

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[Array], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _acc(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar; scalars are treated as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: Array, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    return out


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a._acc(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data - b.data

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a._acc(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a._acc(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a._acc(g @ b.data.T)
        if b.requires_grad:
            b._acc(a.data.T @ g)

    return _make(data, (a, b), bwd)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g: Array) -> None:
        a._acc(g * data)

    return _make(data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bwd(g: Array) -> None:
        a._acc(g / a.data)

    return _make(data, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bwd(g: Array) -> None:
        a._acc(g * (1.0 - data * data))

    return _make(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g: Array) -> None:
        a._acc(g * data * (1.0 - data))

    return _make(data, (a,), bwd)


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis, computed stably via max-shift."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse

    def bwd(g: Array) -> None:
        a._acc(g - np.exp(data) * g.sum(axis=-1, keepdims=True))

    return _make(data, (a,), bwd)


def gather(a: Tensor, idx: Array) -> Tensor:
    """Pick one column per row: a is (B, V), idx is (B,), result (B,)."""
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, idx]

    def bwd(g: Array) -> None:
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, idx), g)
        a._acc(ga)

    return _make(data, (a,), bwd)


def take_rows(w: Tensor, ids: Array) -> Tensor:
    """Embedding lookup: w is (V, E), ids is (B,), result (B, E)."""
    data = w.data[ids]

    def bwd(g: Array) -> None:
        gw = np.zeros_like(w.data)
        np.add.at(gw, ids, g)
        w._acc(gw)

    return _make(data, (w,), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    data = a.data[:, start:stop]

    def bwd(g: Array) -> None:
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        a._acc(ga)

    return _make(data, (a,), bwd)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def bwd(g: Array) -> None:
        if a.requires_grad:
            a._acc(g * take_a)
        if b.requires_grad:
            b._acc(g * ~take_a)

    return _make(data, (a, b), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bwd(g: Array) -> None:
        a._acc(g * inside)

    return _make(data, (a,), bwd)


def total(a: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    data = np.asarray(a.data.sum())

    def bwd(g: Array) -> None:
        a._acc(np.broadcast_to(g, a.data.shape).copy() if g.shape else np.full_like(a.data, float(g)))

    return _make(data, (a,), bwd)


def backward(root: Tensor) -> None:
    """Backpropagate d(root)/d(leaf) into .grad of every reachable leaf.

    Iterative postorder; graphs here are thousands of nodes deep, far past
    the recursion limit.
    """
    if not root.requires_grad:
        raise TapeError("root does not require grad; nothing to backpropagate")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, emitted = stack.pop()
        if emitted:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._bwd is not None:
            node._bwd(node.grad)


class GradientTape:
    """Single-use handle tying a scalar objective to its parameter leaves."""

    def __init__(self, root: Tensor, leaves: Sequence[Tensor]):
        self.root = root
        self.leaves = tuple(leaves)
        self._done = False

    def run_backward(self) -> None:
        if self._done:
            raise TapeError("tape already consumed; rebuild the graph to differentiate again")
        self._done = True
        backward(self.root)

    def leaf_grad(self, leaf: Tensor) -> Array:
        if not self._done:
            raise TapeError("backward has not run yet")
        return leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
