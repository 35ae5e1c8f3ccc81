"""Low-rank adapters over frozen base matrices, and the concat classifier.

A base matrix maps an input of length d_in to an output of length d_out
and is stored with shape (d_out, d_in). An adapter holds A (r x d_in) and
B (d_out x r); its contribution to the affine map is B @ (A @ z), a rank-r
update computed in O(d_out*r + r*d_in) without materializing the dense
d_out x d_in delta. B starts at zero so the adapted model initially equals
the base model exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .embedding import Embedder
from .errors import ShapeMismatch
from .tensorfile import load_tensors, save_tensors


@dataclass
class LoraAdapter:
    target: str
    a: np.ndarray  # (rank, d_in)
    b: np.ndarray  # (d_out, rank)

    def __post_init__(self) -> None:
        if self.a.ndim != 2 or self.b.ndim != 2:
            raise ShapeMismatch("adapter factors must be matrices")
        if self.a.shape[0] != self.b.shape[1]:
            raise ShapeMismatch(
                f"rank mismatch: A is {self.a.shape}, B is {self.b.shape}"
            )

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def d_in(self) -> int:
        return self.a.shape[1]

    @property
    def d_out(self) -> int:
        return self.b.shape[0]

    def delta(self) -> np.ndarray:
        """The dense rank-<=r update B @ A (materialized; tests only)."""
        return self.b @ self.a

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(self.target, self.a.copy(), self.b.copy())

    @classmethod
    def init(cls, target: str, d_out: int, d_in: int, rank: int,
             rng: np.random.Generator) -> "LoraAdapter":
        """A ~ uniform(-1/sqrt(d_in), 1/sqrt(d_in)), B = 0, so the initial
        update is exactly zero and retention loss starts at zero."""
        bound = 1.0 / np.sqrt(d_in)
        return cls(
            target=target,
            a=rng.uniform(-bound, bound, (rank, d_in)),
            b=np.zeros((d_out, rank)),
        )


def _check_geometry(w0: np.ndarray, adapter: LoraAdapter, z: np.ndarray,
                    bias: np.ndarray | None) -> None:
    d_out, d_in = w0.shape
    if adapter.a.shape[1] != d_in or adapter.b.shape[0] != d_out:
        raise ShapeMismatch(
            f"adapter ({adapter.b.shape[0]}x{adapter.rank}, "
            f"{adapter.rank}x{adapter.a.shape[1]}) incompatible with base {w0.shape}"
        )
    if z.shape[-1] != d_in:
        raise ShapeMismatch(f"input length {z.shape[-1]} != base columns {d_in}")
    if bias is not None and bias.shape != (d_out,):
        raise ShapeMismatch(f"bias shape {bias.shape} != ({d_out},)")


def lora_forward(
    w0: np.ndarray,
    adapter: LoraAdapter,
    z: np.ndarray,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Affine map W0 @ z + B @ (A @ z) + bias.

    Accepts a single vector or a batch with the input along the last axis.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check_geometry(w0, adapter, z, bias)
    out = z @ w0.T + (z @ adapter.a.T) @ adapter.b.T
    if bias is not None:
        out = out + bias
    return out


def merge_adapter(w0: np.ndarray, adapter: LoraAdapter) -> np.ndarray:
    """Dense merged weights W0 + B @ A; rank(merged - W0) <= adapter rank."""
    w0 = np.asarray(w0, dtype=np.float64)
    if adapter.a.shape[1] != w0.shape[1] or adapter.b.shape[0] != w0.shape[0]:
        raise ShapeMismatch(
            f"adapter update {adapter.b.shape[0]}x{adapter.a.shape[1]} "
            f"incompatible with base {w0.shape}"
        )
    return w0 + adapter.b @ adapter.a


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


@dataclass
class ClassifierHead:
    """Linear classifier over the concatenation of two text embeddings.

    The base weights stay frozen; all learning happens in the adapter.
    Input length is 2 x embedder dim, output length is len(categories).
    """

    w0: np.ndarray
    bias: np.ndarray
    adapter: LoraAdapter
    categories: tuple[str, ...]

    @classmethod
    def init(cls, embed_dim: int, categories: Sequence[str], rank: int = 8,
             seed: int = 0) -> "ClassifierHead":
        rng = np.random.default_rng(seed)
        d_in = 2 * embed_dim
        d_out = len(categories)
        w0 = rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_out, d_in))
        return cls(
            w0=w0,
            bias=np.zeros(d_out),
            adapter=LoraAdapter.init("classifier.w0", d_out, d_in, rank, rng),
            categories=tuple(categories),
        )

    def input_vector(self, question: str, entity: str, embedder: Embedder) -> np.ndarray:
        return np.concatenate([embedder.embed(question), embedder.embed(entity)])

    def logits(self, z: np.ndarray) -> np.ndarray:
        return lora_forward(self.w0, self.adapter, z, self.bias)

    def copy(self) -> "ClassifierHead":
        return ClassifierHead(self.w0.copy(), self.bias.copy(),
                              self.adapter.copy(), self.categories)


def classify(question: str, entity: str, head: ClassifierHead,
             embedder: Embedder) -> np.ndarray:
    """Category distribution softmax(W0 @ concat(q, e) + B @ (A @ z) + bias)."""
    if 2 * embedder.dim != head.w0.shape[1]:
        raise ShapeMismatch(
            f"embedder dim {embedder.dim} incompatible with head input "
            f"{head.w0.shape[1]}"
        )
    z = head.input_vector(question, entity, embedder)
    return _softmax(head.logits(z))


def save_adapters(
    path: str | Path,
    adapters: Mapping[str, LoraAdapter],
    config_meta: dict | None = None,
) -> None:
    tensors: dict[str, np.ndarray] = {}
    targets: dict[str, int] = {}
    for name, adapter in adapters.items():
        tensors[f"{name}.A"] = adapter.a
        tensors[f"{name}.B"] = adapter.b
        targets[name] = adapter.rank
    meta = {"kind": "adapters", "targets": targets, "config": config_meta or {}}
    save_tensors(path, tensors, meta)


def load_adapters(path: str | Path) -> tuple[dict[str, LoraAdapter], dict]:
    tensors, meta = load_tensors(path)
    adapters: dict[str, LoraAdapter] = {}
    for name in meta.get("targets", {}):
        adapters[name] = LoraAdapter(name, tensors[f"{name}.A"], tensors[f"{name}.B"])
    return adapters, meta.get("config", {})
