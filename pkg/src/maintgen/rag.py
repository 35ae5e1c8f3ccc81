"""Grounded answer generation: retrieval prior, per-chunk candidates,
and marginalized scoring.

The pipeline embeds the query, takes the exact top-k chunks, softmax-
normalizes their inner products into a prior, generates one candidate
answer per chunk, scores every candidate under every chunk, and returns
the candidate with the highest prior-weighted (marginal) probability,
carrying the full citation table. With k = 1 this reduces to plain
conditional generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .corpus import Chunk
from .embedding import Embedder
from .errors import EmptyHits, EmptyIndex, LengthMismatch, RetrievalBelowFloor
from .index import ChunkRef, ScoredHit, VectorIndex, mips_top_k
from .lora import LoraAdapter
from .model import LMParams, SamplerConfig, build_prompt, sample, sequence_log_prob
from .tokenizer import Tokenizer

DEFAULT_RETRIEVAL_FLOOR = 0.05


@dataclass(frozen=True)
class PriorHit:
    chunk_ref: ChunkRef
    inner_product: float
    prior: float


@dataclass(frozen=True)
class RetrievalPrior:
    hits: tuple[PriorHit, ...]

    def priors(self) -> np.ndarray:
        return np.array([h.prior for h in self.hits])


@dataclass(frozen=True)
class Citation:
    doc_id: str
    seq: int
    prior: float
    cond_log_prob: float

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "seq": self.seq,
            "prior": self.prior,
            "cond_log_prob": self.cond_log_prob,
        }


@dataclass(frozen=True)
class GeneratedAnswer:
    text: str
    marginal_log_prob: float
    citations: tuple[Citation, ...]
    candidate_set_size: int

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "marginal_log_prob": self.marginal_log_prob,
            "citations": [c.to_dict() for c in self.citations],
            "k": len(self.citations),
        }

    def with_text(self, text: str) -> "GeneratedAnswer":
        return GeneratedAnswer(text, self.marginal_log_prob, self.citations,
                               self.candidate_set_size)


def retrieval_prior(hits: Sequence[ScoredHit]) -> RetrievalPrior:
    """Softmax over the retrieved scores (shift-invariant, exact sum 1)."""
    if not hits:
        raise EmptyHits("cannot build a prior over zero hits")
    scores = np.array([h.inner_product for h in hits], dtype=np.float64)
    shifted = np.exp(scores - scores.max())
    priors = shifted / shifted.sum()
    return RetrievalPrior(
        hits=tuple(
            PriorHit(h.chunk_ref, h.inner_product, float(p))
            for h, p in zip(hits, priors)
        )
    )


def marginalize(prior: RetrievalPrior, conditionals: Sequence[float]) -> float:
    """p(y|x) = sum_i p(y|z_i, x) * p(z_i|x); a convex combination."""
    if len(conditionals) != len(prior.hits):
        raise LengthMismatch(
            f"{len(conditionals)} conditionals for {len(prior.hits)} hits"
        )
    for c in conditionals:
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"conditional {c} outside [0, 1]")
    return float(np.dot(prior.priors(), np.asarray(conditionals, dtype=np.float64)))


def _log_marginal(log_priors: np.ndarray, cond_log_probs: np.ndarray) -> float:
    terms = log_priors + cond_log_probs
    peak = terms.max()
    if peak == -math.inf:
        return -math.inf
    return float(peak + math.log(np.exp(terms - peak).sum()))


def generate_answer(
    query: str,
    index: VectorIndex,
    chunks: Mapping[ChunkRef, Chunk],
    params: LMParams,
    tokenizer: Tokenizer,
    embedder: Embedder,
    k: int,
    sampler: SamplerConfig,
    adapters: Optional[Mapping[str, LoraAdapter]] = None,
    floor: float = DEFAULT_RETRIEVAL_FLOOR,
) -> GeneratedAnswer:
    """Retrieve, generate one candidate per chunk, rescore marginally.

    Raises EmptyIndex when nothing is retrievable and RetrievalBelowFloor
    when even the best hit scores under the confidence floor (the caller
    should refuse rather than answer from noise).
    """
    if index.retrievable_count == 0:
        raise EmptyIndex("index has no retrievable entries")
    from .training import _adapter_tensors  # local import to avoid a cycle

    atensors = _adapter_tensors(adapters, trainable=False) if adapters else None
    hits = mips_top_k(index, embedder.embed(query), k)
    if not hits or hits[0].inner_product < floor:
        best = hits[0].inner_product if hits else -math.inf
        raise RetrievalBelowFloor(best, floor)
    prior = retrieval_prior(hits)

    prompts = [
        build_prompt(tokenizer, query, context=chunks[h.chunk_ref].text)
        for h in hits
    ]
    candidates: list[list[int]] = []
    for prompt in prompts:
        ids = sample(params, prompt, sampler, tokenizer.eos_id, atensors)
        if tuple(ids) not in {tuple(c) for c in candidates}:
            candidates.append(ids)

    log_priors = np.log(prior.priors())
    best_idx, best_marginal, best_conds = 0, -math.inf, np.zeros(len(hits))
    for idx, candidate in enumerate(candidates):
        conds = np.array([
            sequence_log_prob(params, prompt, candidate, atensors)
            for prompt in prompts
        ])
        marginal = _log_marginal(log_priors, conds)
        if marginal > best_marginal:
            best_idx, best_marginal, best_conds = idx, marginal, conds

    citations = tuple(
        Citation(h.chunk_ref[0], h.chunk_ref[1], ph.prior, float(c))
        for h, ph, c in zip(hits, prior.hits, best_conds)
    )
    return GeneratedAnswer(
        text=tokenizer.decode(candidates[best_idx]),
        marginal_log_prob=best_marginal,
        citations=citations,
        candidate_set_size=len(candidates),
    )
