"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough ops for a small transformer and its losses: broadcasting
arithmetic, (batched) matmul, embedding gather, row softmax/log-softmax,
GELU, parameter-free RMS normalization, reductions, reshapes. Gradients
are exact analytic forms, verified against central finite differences in
the test suite. Everything is double precision; graphs are built eagerly
and freed by garbage collection after backward().
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

Array = np.ndarray


def _as_array(value) -> Array:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcasted gradient back down to the parent's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Optional[Callable[[Array], None]] = None,
    ):
        self.data = _as_array(data)
        self.grad: Optional[Array] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _accumulate(self, grad: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph walk ------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every reachable requires_grad tensor."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)

        def backward(g: Array) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor(self.data + other.data, parents=(self, other), backward=backward)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)

        def backward(g: Array) -> None:
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor(self.data * other.data, parents=(self, other), backward=backward)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other) -> "Tensor":
        return Tensor(other) + (-self)

    def __truediv__(self, scalar: float) -> "Tensor":
        return self * (1.0 / float(scalar))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports leading batch dimensions a la numpy."""

    def backward(g: Array) -> None:
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return Tensor(a.data @ b.data, parents=(a, b), backward=backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: Array) -> None:
        x._accumulate(g.transpose(inverse))

    return Tensor(x.data.transpose(axes), parents=(x,), backward=backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old_shape = x.data.shape

    def backward(g: Array) -> None:
        x._accumulate(g.reshape(old_shape))

    return Tensor(x.data.reshape(tuple(shape)), parents=(x,), backward=backward)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Embedding lookup: rows of a 2-D table selected by integer ids."""
    idx = np.asarray(ids, dtype=np.intp)

    def backward(g: Array) -> None:
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return Tensor(table.data[idx], parents=(table,), backward=backward)


def pick_per_row(x: Tensor, cols: Sequence[int]) -> Tensor:
    """out[t] = x[t, cols[t]] for a 2-D input."""
    idx = np.asarray(cols, dtype=np.intp)
    rows = np.arange(x.data.shape[0])

    def backward(g: Array) -> None:
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, (rows, idx), g)

    return Tensor(x.data[rows, idx], parents=(x,), backward=backward)


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)

    def backward(g: Array) -> None:
        inner = (g * out).sum(axis=-1, keepdims=True)
        x._accumulate(out * (g - inner))

    return Tensor(out, parents=(x,), backward=backward)


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g: Array) -> None:
        x._accumulate(g - np.exp(out) * g.sum(axis=-1, keepdims=True))

    return Tensor(out, parents=(x,), backward=backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-form GELU; smooth everywhere, which keeps finite-difference
    gradient checks well-conditioned."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g: Array) -> None:
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        grad = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du
        x._accumulate(g * grad)

    return Tensor(out, parents=(x,), backward=backward)


def rms_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Parameter-free RMS normalization over the last axis."""
    n = x.data.shape[-1]
    mean_sq = (x.data**2).mean(axis=-1, keepdims=True) + eps
    r = mean_sq**-0.5
    out = x.data * r

    def backward(g: Array) -> None:
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        x._accumulate(g * r - x.data * dot * r**3 / n)

    return Tensor(out, parents=(x,), backward=backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        x._accumulate(np.broadcast_to(g, x.data.shape).copy())

    return Tensor(x.data.sum(), parents=(x,), backward=backward)


def mean_all(x: Tensor) -> Tensor:
    return sum_all(x) / float(x.data.size)


def concat_rows(parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: Array) -> None:
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if part.requires_grad:
                part._accumulate(g[start:stop])

    return Tensor(np.concatenate([p.data for p in parts], axis=0),
                  parents=tuple(parts), backward=backward)
