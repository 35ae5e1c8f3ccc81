"""Task loss, retention loss, and their dynamically weighted combination.

The combined objective is (1 - w) * ce + w * kl, where ce fits the
current task, kl anchors the model to its pretrained output distribution,
and w is recomputed per batch from the task-gradient magnitude:

    w = f / (f + gamma * (y_pre / y_cur)^2)

with f the squared L2 norm of the task-loss gradient over trainable
parameters, y_pre / y_cur the pretrained and current model probabilities
of the reference output, and gamma a balance hyperparameter. gamma = inf
is the supported limit that forces w = 0 (pure task loss).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import (
    DegenerateCurrentOutput,
    SupportMismatch,
    ZeroProbabilityReference,
)

Dist = np.ndarray  # one distribution (1-D) or per-position rows (2-D)


def _rows(dist: Dist) -> np.ndarray:
    arr = np.asarray(dist, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


def ce_loss(predicted: Dist, reference: Union[int, Sequence[int]]) -> float:
    """Mean negative log-likelihood of the reference under `predicted`.

    Single distribution + integer label, or per-position rows + a label
    sequence. Raises ZeroProbabilityReference instead of returning inf;
    training paths avoid this entirely by working in logit space.
    """
    rows = _rows(predicted)
    labels = [int(reference)] if np.isscalar(reference) else [int(r) for r in reference]
    if len(labels) != rows.shape[0]:
        raise SupportMismatch(
            f"{rows.shape[0]} distributions vs {len(labels)} reference labels"
        )
    total = 0.0
    for row, label in zip(rows, labels):
        p = row[label]
        if p <= 0.0:
            raise ZeroProbabilityReference(f"reference label {label} has probability {p}")
        total += -math.log(p)
    return total / len(labels)


def kl_loss(pretrained: Dist, current: Dist) -> float:
    """KL(pretrained || current), averaged over positions for sequences.

    Zero iff the distributions are equal; +inf where the current model
    assigns zero mass to something the pretrained model supports.
    """
    p = _rows(pretrained)
    q = _rows(current)
    if p.shape != q.shape:
        raise SupportMismatch(f"distribution shapes differ: {p.shape} vs {q.shape}")
    total = 0.0
    for p_row, q_row in zip(p, q):
        support = p_row > 0.0
        if np.any(q_row[support] == 0.0):
            return math.inf
        total += float(np.sum(p_row[support] * np.log(p_row[support] / q_row[support])))
    return max(total / p.shape[0], 0.0)


@dataclass(frozen=True)
class KRWeightInputs:
    """Scalars feeding the dynamic weight for one batch/sample.

    grad_sq_norm: squared L2 norm of the task-loss gradient over the
    trainable adapter parameters. prob_pretrained / prob_current: the
    pretrained and current models' probability of the reference output
    (per-token geometric mean for sequences), both in (0, 1].
    """

    grad_sq_norm: float
    prob_pretrained: float
    prob_current: float

    def __post_init__(self) -> None:
        if self.grad_sq_norm < 0.0:
            raise ValueError("grad_sq_norm must be >= 0")
        if not 0.0 < self.prob_pretrained <= 1.0:
            raise ValueError("prob_pretrained must be in (0, 1]")
        if self.prob_current < 0.0 or self.prob_current > 1.0:
            raise ValueError("prob_current must be in [0, 1]")


def kr_weight(inputs: KRWeightInputs, gamma: float) -> float:
    """Dynamic retention weight w = f / (f + gamma * (y_pre / y_cur)^2).

    In [0, 1); zero iff the task gradient vanishes (or gamma is the inf
    sentinel); strictly increasing in f and strictly decreasing in gamma.
    """
    if gamma <= 0.0:
        raise ValueError("gamma must be > 0")
    if inputs.prob_current == 0.0:
        raise DegenerateCurrentOutput(
            "current model probability underflowed to zero"
        )
    f = inputs.grad_sq_norm
    if f == 0.0 or math.isinf(gamma):
        return 0.0
    ratio = inputs.prob_pretrained / inputs.prob_current
    penalty = gamma * ratio * ratio
    if not math.isfinite(penalty) or penalty > f * 1e16:
        # Dominated regime: compute w ~= f / penalty without overflow.
        inv = inputs.prob_current / inputs.prob_pretrained
        w = (f / gamma) * inv * inv
    else:
        w = f / (f + penalty)
    # In exact arithmetic 0 < w < 1 whenever f > 0; keep the open interval
    # when float rounding lands on a boundary.
    if w >= 1.0:
        w = math.nextafter(1.0, 0.0)
    elif w <= 0.0:
        w = math.nextafter(0.0, 1.0)
    return w


def kr_loss(ce: float, kl: float, w: float) -> float:
    """Convex combination (1 - w) * ce + w * kl."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"w must be in [0, 1], got {w}")
    if ce < 0.0 or kl < 0.0:
        raise ValueError("losses must be nonnegative")
    return (1.0 - w) * ce + w * kl
