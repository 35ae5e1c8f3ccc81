"""Pluggable text embedders and the deterministic reference embedder.

The reference embedder is a signed-hash bag of tokens: every token hashes
to one bucket with sign +/-1, contributions accumulate, and the result is
L2-normalized. It is fully deterministic across runs and platforms (no
PYTHONHASHSEED dependence), order-invariant by construction, and maps
empty text to the zero vector. Real encoder models plug in behind the
same interface.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .tokenizer import split_text


@runtime_checkable
class Embedder(Protocol):
    """Deterministic text -> fixed-dimension float64 vector."""

    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def _token_hash(token: str, salt: bytes) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=salt).digest()
    return int.from_bytes(digest, "little")


def reference_embed(text: str, dim: int) -> np.ndarray:
    """Signed-hash bag-of-tokens embedding, unit norm (or zero for empty text)."""
    if dim < 8:
        raise ValueError(f"dim must be >= 8, got {dim}")
    vec = np.zeros(dim, dtype=np.float64)
    for token in split_text(text):
        bucket = _token_hash(token, b"bucket") % dim
        sign = 1.0 if _token_hash(token, b"sign") % 2 == 0 else -1.0
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm > 0.0:
        vec /= norm
    return vec


@dataclass(frozen=True)
class HashEmbedder:
    """Reference Embedder implementation backed by reference_embed."""

    dim: int = 256

    def embed(self, text: str) -> np.ndarray:
        return reference_embed(text, self.dim)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero whenever either vector is zero."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
