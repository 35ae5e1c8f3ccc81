"""Text-generation metrics over the shared tokenizer: n-gram and LCS
overlap families, geometric-mean n-gram precision with brevity penalty,
embedding-based greedy-matching P/R/F, and per-object answer accuracy.

All scores are in [0, 1], identical non-empty inputs score 1, and the
recall/precision pairs are exact mirrors under candidate/reference swap.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .embedding import Embedder, cosine
from .rag import GeneratedAnswer
from .tokenizer import split_text


@dataclass(frozen=True)
class MetricResult:
    """recall/precision/f1 for overlap metrics; score for single-number
    metrics (which mirror it into all four fields)."""

    recall: float
    precision: float
    f1: float
    score: float

    @classmethod
    def from_prf(cls, recall: float, precision: float) -> "MetricResult":
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(recall=recall, precision=precision, f1=f1, score=f1)

    @classmethod
    def from_score(cls, score: float) -> "MetricResult":
        return cls(recall=score, precision=score, f1=score, score=score)

    @classmethod
    def zero(cls) -> "MetricResult":
        return cls(0.0, 0.0, 0.0, 0.0)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: str, reference: str, n: int) -> MetricResult:
    """Clipped n-gram overlap; recall against the reference grams,
    precision against the candidate grams."""
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    cand = _ngrams(split_text(candidate), n)
    ref = _ngrams(split_text(reference), n)
    if not cand or not ref:
        return MetricResult.zero()
    overlap = sum((cand & ref).values())
    return MetricResult.from_prf(
        recall=overlap / sum(ref.values()),
        precision=overlap / sum(cand.values()),
    )


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for tok_a in a:
        cur = [0] * (len(b) + 1)
        for j, tok_b in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if tok_a == tok_b else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> MetricResult:
    cand = split_text(candidate)
    ref = split_text(reference)
    if not cand or not ref:
        return MetricResult.zero()
    lcs = _lcs_length(cand, ref)
    return MetricResult.from_prf(recall=lcs / len(ref), precision=lcs / len(cand))


def bleu(candidate: str, references: str | Sequence[str], max_n: int = 4) -> MetricResult:
    """Geometric mean of clipped n-gram precisions times brevity penalty.

    Zero counts at n >= 2 get add-one smoothing (short maintenance
    sentences would otherwise degenerate); orders with no candidate
    n-grams are excluded from the mean.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if isinstance(references, str):
        references = [references]
    cand_tokens = split_text(candidate)
    ref_token_lists = [split_text(r) for r in references]
    if not cand_tokens or not any(ref_token_lists):
        return MetricResult.zero()

    log_precisions: list[float] = []
    for n in range(1, max_n + 1):
        cand_grams = _ngrams(cand_tokens, n)
        total = sum(cand_grams.values())
        if total == 0:
            continue
        max_ref: Counter = Counter()
        for ref_tokens in ref_token_lists:
            for gram, count in _ngrams(ref_tokens, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        matches = sum(min(count, max_ref[gram]) for gram, count in cand_grams.items())
        if matches == 0:
            if n == 1:
                return MetricResult.from_score(0.0)
            precision = 1.0 / (total + 1)
        else:
            precision = matches / total
        log_precisions.append(math.log(precision))

    if not log_precisions:
        return MetricResult.zero()
    geo_mean = math.exp(sum(log_precisions) / len(log_precisions))
    c = len(cand_tokens)
    r = min((len(t) for t in ref_token_lists if t),
            key=lambda length: (abs(length - c), length))
    bp = min(1.0, math.exp(1.0 - r / c))
    return MetricResult.from_score(geo_mean * bp)


def embed_score(candidate: str, reference: str, embedder: Embedder) -> MetricResult:
    """Greedy token-matching similarity: precision is the mean over
    candidate tokens of the best cosine against reference tokens, recall
    the mirror image, f1 their harmonic mean."""
    cand = split_text(candidate)
    ref = split_text(reference)
    if not cand or not ref:
        return MetricResult.zero()
    cand_vecs = [embedder.embed(tok) for tok in cand]
    ref_vecs = [embedder.embed(tok) for tok in ref]
    sims = np.array([[cosine(cv, rv) for rv in ref_vecs] for cv in cand_vecs])
    precision = float(np.clip(sims.max(axis=1), 0.0, 1.0).mean())
    recall = float(np.clip(sims.max(axis=0), 0.0, 1.0).mean())
    return MetricResult.from_prf(recall=recall, precision=precision)


def substring_criterion(answer_text: str, gold: str) -> bool:
    return gold.lower() in answer_text.lower()


def object_accuracy(
    answers: Sequence[tuple[str, GeneratedAnswer | str, str]],
    criterion: Optional[Callable[[str, str], bool]] = None,
) -> dict[str, float]:
    """Per-object accuracy of (object_type, answer, gold) triples plus an
    'overall' mean over scored answers. Objects with no answers are
    simply absent (never reported as zero)."""
    criterion = criterion or substring_criterion
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for object_type, answer, gold in answers:
        text = answer.text if isinstance(answer, GeneratedAnswer) else str(answer)
        totals[object_type] = totals.get(object_type, 0) + 1
        hits[object_type] = hits.get(object_type, 0) + int(criterion(text, gold))
    table = {obj: hits[obj] / totals[obj] for obj in sorted(totals)}
    if totals:
        table["overall"] = sum(hits.values()) / sum(totals.values())
    return table
