"""Compact autoregressive transformer: the trainable generation model.

Decoder-only, pre-norm, parameter-free RMS normalization, sinusoidal
positions, GELU feed-forward, double precision throughout. Small enough
that finite-difference gradient checks run in seconds, large enough to
overfit the fixture corpora used by the test and experiment harnesses.

Low-rank adapters attach to the per-block query/value projections; the
forward pass accepts an optional mapping of target name to (A, B) tensor
pairs and adds (h @ A^T) @ B^T to the affected projections without ever
materializing the dense update.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EmptyContinuation, SequenceTooLong
from .tensorfile import load_tensors, save_tensors
from .tokenizer import Tokenizer

AdapterPair = tuple[Tensor, Tensor]  # (A: r x d_in, B: d_out x r)


@dataclass
class SamplerConfig:
    """Decoding controls. temperature == 0.0 is the greedy sentinel."""

    temperature: float = 0.7
    max_new_tokens: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0 (0 means greedy)")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")

    @property
    def greedy(self) -> bool:
        return self.temperature == 0.0


def sinusoidal_positions(max_length: int, d_model: int) -> np.ndarray:
    positions = np.arange(max_length, dtype=np.float64)[:, None]
    dims = np.arange(d_model, dtype=np.float64)[None, :]
    angles = positions / np.power(10000.0, (2 * (dims // 2)) / d_model)
    table = np.zeros((max_length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


@dataclass
class LMParams:
    """All model weights as named float64 arrays plus hyperparameters."""

    vocab_size: int
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    max_length: int = 1024
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        self._pos_table = sinusoidal_positions(self.max_length, self.d_model)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def init(
        cls,
        vocab_size: int,
        d_model: int = 64,
        n_blocks: int = 2,
        n_heads: int = 4,
        max_length: int = 1024,
        seed: int = 0,
    ) -> "LMParams":
        rng = np.random.default_rng(seed)
        std = 0.05
        d_ff = 4 * d_model
        tensors: dict[str, np.ndarray] = {
            "emb": rng.normal(0.0, std, (vocab_size, d_model)),
            "w_out": rng.normal(0.0, std, (vocab_size, d_model)),
            "b_out": np.zeros(vocab_size),
        }
        for b in range(n_blocks):
            for name in ("wq", "wk", "wv", "wo"):
                tensors[f"block{b}.{name}"] = rng.normal(0.0, std, (d_model, d_model))
            tensors[f"block{b}.w_ff1"] = rng.normal(0.0, std, (d_ff, d_model))
            tensors[f"block{b}.b_ff1"] = np.zeros(d_ff)
            tensors[f"block{b}.w_ff2"] = rng.normal(0.0, std, (d_model, d_ff))
            tensors[f"block{b}.b_ff2"] = np.zeros(d_model)
        return cls(
            vocab_size=vocab_size,
            d_model=d_model,
            n_blocks=n_blocks,
            n_heads=n_heads,
            max_length=max_length,
            tensors=tensors,
        )

    def adapter_targets(self) -> dict[str, tuple[int, int]]:
        """Default attachment points: each block's query and value maps.

        Returns target name -> (d_out, d_in) of the base matrix.
        """
        targets: dict[str, tuple[int, int]] = {}
        for b in range(self.n_blocks):
            for name in ("wq", "wv"):
                key = f"block{b}.{name}"
                targets[key] = self.tensors[key].shape
        return targets

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def byte_hash(self) -> str:
        """Digest over all weights; used to assert base-weight freezing."""
        digest = hashlib.sha256()
        for name in sorted(self.tensors):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.tensors[name]).tobytes())
        return digest.hexdigest()

    def copy(self) -> "LMParams":
        return LMParams(
            vocab_size=self.vocab_size,
            d_model=self.d_model,
            n_blocks=self.n_blocks,
            n_heads=self.n_heads,
            max_length=self.max_length,
            tensors={k: v.copy() for k, v in self.tensors.items()},
        )

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": "lm",
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_blocks": self.n_blocks,
            "n_heads": self.n_heads,
            "max_length": self.max_length,
        }
        save_tensors(path, self.tensors, meta)

    @classmethod
    def load(cls, path: str | Path) -> "LMParams":
        tensors, meta = load_tensors(path)
        return cls(
            vocab_size=int(meta["vocab_size"]),
            d_model=int(meta["d_model"]),
            n_blocks=int(meta["n_blocks"]),
            n_heads=int(meta["n_heads"]),
            max_length=int(meta["max_length"]),
            tensors=tensors,
        )


def param_tensors(params: LMParams, trainable: bool = False) -> dict[str, Tensor]:
    return {name: Tensor(arr, requires_grad=trainable) for name, arr in params.tensors.items()}


def _linear(h: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
            adapter: Optional[AdapterPair] = None) -> Tensor:
    out = ad.matmul(h, ad.transpose(weight, (1, 0)))
    if adapter is not None:
        a, b = adapter
        out = out + ad.matmul(ad.matmul(h, ad.transpose(a, (1, 0))), ad.transpose(b, (1, 0)))
    if bias is not None:
        out = out + bias
    return out


def lm_forward_graph(
    params: LMParams,
    ptensors: Mapping[str, Tensor],
    ids: Sequence[int],
    adapters: Optional[Mapping[str, AdapterPair]] = None,
) -> Tensor:
    """Causal forward pass returning the (positions x vocab) logits node."""
    n = len(ids)
    if n == 0:
        raise ValueError("ids must be nonempty")
    if n > params.max_length:
        raise SequenceTooLong(f"sequence length {n} > max_length {params.max_length}")
    adapters = adapters or {}
    heads, head_dim = params.n_heads, params.head_dim

    x = ad.gather_rows(ptensors["emb"], ids) + Tensor(params._pos_table[:n])
    mask = Tensor(np.triu(np.full((n, n), -1e30), k=1))
    scale = 1.0 / math.sqrt(head_dim)

    def split_heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (n, heads, head_dim)), (1, 0, 2))

    for b in range(params.n_blocks):
        h = ad.rms_norm(x)
        q = _linear(h, ptensors[f"block{b}.wq"], adapter=adapters.get(f"block{b}.wq"))
        k = _linear(h, ptensors[f"block{b}.wk"], adapter=adapters.get(f"block{b}.wk"))
        v = _linear(h, ptensors[f"block{b}.wv"], adapter=adapters.get(f"block{b}.wv"))
        scores = ad.matmul(split_heads(q), ad.transpose(split_heads(k), (0, 2, 1))) * scale
        weights = ad.softmax(scores + mask)
        mixed = ad.matmul(weights, split_heads(v))
        merged = ad.reshape(ad.transpose(mixed, (1, 0, 2)), (n, params.d_model))
        x = x + _linear(merged, ptensors[f"block{b}.wo"], adapter=adapters.get(f"block{b}.wo"))

        h2 = ad.rms_norm(x)
        ff = ad.gelu(_linear(h2, ptensors[f"block{b}.w_ff1"], ptensors[f"block{b}.b_ff1"]))
        x = x + _linear(ff, ptensors[f"block{b}.w_ff2"], ptensors[f"block{b}.b_ff2"])

    final = ad.rms_norm(x)
    return _linear(final, ptensors["w_out"], ptensors["b_out"],
                   adapter=adapters.get("w_out"))


def lm_forward(
    params: LMParams,
    ids: Sequence[int],
    adapters: Optional[Mapping[str, AdapterPair]] = None,
) -> np.ndarray:
    """Inference forward pass: logits as a plain (positions x vocab) array."""
    return lm_forward_graph(params, param_tensors(params), ids, adapters).data


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sequence_log_prob(
    params: LMParams,
    prompt: Sequence[int],
    continuation: Sequence[int],
    adapters: Optional[Mapping[str, AdapterPair]] = None,
) -> float:
    """log p(continuation | prompt) under teacher forcing; always <= 0."""
    if len(continuation) == 0:
        raise EmptyContinuation("continuation must be nonempty")
    if len(prompt) == 0:
        raise ValueError("prompt must contain at least one token")
    full = list(prompt) + list(continuation)
    if len(full) > params.max_length:
        raise SequenceTooLong(
            f"sequence length {len(full)} > max_length {params.max_length}"
        )
    logits = lm_forward(params, full[:-1], adapters)
    logp = _log_softmax_rows(logits)
    start = len(prompt) - 1
    total = 0.0
    for offset, token in enumerate(continuation):
        total += logp[start + offset, token]
    return float(total)


def sample(
    params: LMParams,
    prompt: Sequence[int],
    config: SamplerConfig,
    eos_id: int,
    adapters: Optional[Mapping[str, AdapterPair]] = None,
) -> list[int]:
    """Autoregressive decoding; returns generated ids without the prompt.

    Greedy when temperature is the 0.0 sentinel, otherwise categorical
    sampling from temperature-scaled logits with a seeded generator.
    """
    if len(prompt) == 0:
        raise ValueError("prompt must contain at least one token")
    if len(prompt) >= params.max_length:
        raise SequenceTooLong(
            f"prompt length {len(prompt)} >= max_length {params.max_length}"
        )
    rng = np.random.default_rng(config.seed)
    ids = list(prompt)
    generated: list[int] = []
    for _ in range(config.max_new_tokens):
        logits = lm_forward(params, ids, adapters)[-1]
        if config.greedy:
            token = int(np.argmax(logits))
        else:
            probs = np.exp(_log_softmax_rows(logits / config.temperature))
            token = int(rng.choice(len(probs), p=probs / probs.sum()))
        generated.append(token)
        ids.append(token)
        if token == eos_id or len(ids) >= params.max_length:
            break
    return generated


def build_prompt(
    tokenizer: Tokenizer,
    question: str,
    context: Optional[str] = None,
) -> list[int]:
    """Conditioning format: BOS [context SEP] question."""
    ids = [tokenizer.bos_id]
    if context is not None:
        ids.extend(tokenizer.encode(context))
        ids.append(tokenizer.sep_id)
    ids.extend(tokenizer.encode(question))
    return ids


def answer_ids(tokenizer: Tokenizer, answer: str) -> list[int]:
    return tokenizer.encode(answer) + [tokenizer.eos_id]
