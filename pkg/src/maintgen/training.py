"""Adapter fine-tuning with the retention-weighted loss, plus base-model
pretraining and the classifier-head trainer.

Per batch the trainer: (1) computes task cross-entropy and its gradients
over the adapter matrices only, (2) derives the dynamic weight w from the
squared gradient norm and the pretrained/current reference probabilities,
treating w as a constant thereafter (no differentiation through w), and
(3) applies the combined gradient (1-w)*gCE + w*gKL with plain mini-batch
gradient descent. Base weights are never touched; the pretrained
distributions come from the same weights with no adapter contribution.

The classifier head uses the same weighting machinery with closed-form
gradients (softmax linear model), giving a second gradient path that is
independent of the autodiff engine.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import MixedDataset, QARecord
from .errors import EmptyDataset, NonFiniteGradient, NonFiniteLoss
from .losses import KRWeightInputs, kr_loss, kr_weight
from .lora import ClassifierHead, LoraAdapter
from .model import (
    LMParams,
    answer_ids,
    build_prompt,
    lm_forward_graph,
    param_tensors,
)
from .tokenizer import Tokenizer

Example = tuple[list[int], list[int]]  # (prompt ids, continuation ids)


@dataclass
class KRConfig:
    """Fine-tuning hyperparameters. gamma = inf forces pure task loss."""

    gamma: float = 1.0
    learning_rate: float = 1e-4
    epochs: int = 4
    batch_size: int = 4
    rank: int = 8
    max_length: int = 1024
    grad_tolerance: float = 1e-4
    max_steps: int = 100_000

    def __post_init__(self) -> None:
        if self.gamma <= 0.0:
            raise ValueError("gamma must be > 0")
        for name in ("learning_rate", "epochs", "batch_size", "rank", "max_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.grad_tolerance < 0.0 or self.max_steps < 0:
            raise ValueError("grad_tolerance and max_steps must be >= 0")

    def to_meta(self) -> dict:
        return {
            "gamma": self.gamma if math.isfinite(self.gamma) else "inf",
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "rank": self.rank,
            "max_length": self.max_length,
            "grad_tolerance": self.grad_tolerance,
            "max_steps": self.max_steps,
        }


@dataclass(frozen=True)
class StepRecord:
    step: int
    ce: float
    kl: float
    kr: float
    w: float
    grad_norm_a: float
    grad_norm_b: float


@dataclass
class TrainState:
    steps: list[StepRecord] = field(default_factory=list)
    converged: bool = False

    @property
    def step_count(self) -> int:
        return len(self.steps)

    def record(self, rec: StepRecord) -> None:
        self.steps.append(rec)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "ce", "kl", "kr", "w", "grad_norm_A", "grad_norm_B"])
            for rec in self.steps:
                writer.writerow([
                    rec.step, repr(rec.ce), repr(rec.kl), repr(rec.kr),
                    repr(rec.w), repr(rec.grad_norm_a), repr(rec.grad_norm_b),
                ])


@dataclass(frozen=True)
class BatchStats:
    ce: float
    kl: float
    kr: float
    w: float
    grad_sq_norm: float
    prob_pretrained: float
    prob_current: float


def init_adapters(params: LMParams, rank: int, seed: int = 0) -> dict[str, LoraAdapter]:
    """Fresh adapters on the model's default targets (B = 0)."""
    rng = np.random.default_rng(seed)
    adapters: dict[str, LoraAdapter] = {}
    for target, (d_out, d_in) in params.adapter_targets().items():
        adapters[target] = LoraAdapter.init(target, d_out, d_in, rank, rng)
    return adapters


def _adapter_tensors(adapters: Mapping[str, LoraAdapter],
                     trainable: bool) -> dict[str, tuple[Tensor, Tensor]]:
    return {
        name: (Tensor(a.a, requires_grad=trainable), Tensor(a.b, requires_grad=trainable))
        for name, a in adapters.items()
    }


def encode_qa(
    tokenizer: Tokenizer,
    record: QARecord,
    max_length: int,
    context: Optional[str] = None,
) -> Example:
    """QA record -> (prompt, continuation) ids, clipping long prompts from
    the left while keeping the leading BOS."""
    prompt = build_prompt(tokenizer, record.question, context)
    cont = answer_ids(tokenizer, record.answer)
    budget = max_length - len(cont)
    if len(prompt) > budget:
        keep = max(budget - 1, 1)
        prompt = [prompt[0]] + prompt[-keep:]
    return prompt, cont


def _clear(*roots: Tensor) -> None:
    for root in roots:
        stack = [root]
        seen: set[int] = set()
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            node.grad = None
            stack.extend(node._parents)


def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def pretrained_reference(params: LMParams, example: Example) -> np.ndarray:
    """Adapter-free log-probability rows at the supervised positions.

    Constant across training steps (base weights are frozen), so callers
    may compute these once per example and reuse them every epoch.
    """
    prompt, cont = example
    full = list(prompt) + list(cont)
    logits = lm_forward_graph(params, param_tensors(params), full[:-1], None).data
    positions = np.arange(len(prompt) - 1, len(full) - 1)
    return _log_softmax_np(logits)[positions]


def kr_gradients(
    params: LMParams,
    adapters: Mapping[str, LoraAdapter],
    batch: Sequence[Example],
    gamma: float,
    pretrained_rows: Optional[Sequence[np.ndarray]] = None,
) -> tuple[dict[str, tuple[np.ndarray, np.ndarray]], BatchStats]:
    """Combined adapter gradients for one batch.

    Returns per-target (grad_A, grad_B) for the loss (1-w)*ce + w*kl and
    the batch statistics. Both losses average over all supervised
    positions in the batch; the retention term compares the current
    per-position distributions against the adapter-free model's
    (pretrained_rows, recomputed here when not supplied).
    """
    if not batch:
        raise EmptyDataset("empty batch")
    if pretrained_rows is not None and len(pretrained_rows) != len(batch):
        raise ValueError("pretrained_rows must align with the batch")
    ptensors = param_tensors(params, trainable=False)
    atensors = _adapter_tensors(adapters, trainable=True)

    picked_parts: list[Tensor] = []
    kl_sum: Optional[Tensor] = None
    pre_logp_total = 0.0
    n_positions = 0
    for i, (prompt, cont) in enumerate(batch):
        full = list(prompt) + list(cont)
        logits = lm_forward_graph(params, ptensors, full[:-1], atensors)
        logp = ad.log_softmax(logits)
        positions = list(range(len(prompt) - 1, len(full) - 1))
        rows = ad.gather_rows(logp, positions)
        picked_parts.append(ad.pick_per_row(rows, cont))

        if pretrained_rows is not None:
            pre_logp = pretrained_rows[i]
        else:
            pre_logp = pretrained_reference(params, (prompt, cont))
        pre_logp_total += float(pre_logp[np.arange(len(cont)), cont].sum())
        pre_probs = np.exp(pre_logp)
        seq_kl = ad.sum_all(Tensor(pre_probs) * (Tensor(pre_logp) - rows))
        kl_sum = seq_kl if kl_sum is None else kl_sum + seq_kl
        n_positions += len(cont)

    picked = ad.concat_rows(picked_parts)
    ce_node = -ad.sum_all(picked) / float(n_positions)
    kl_node = kl_sum / float(n_positions)
    ce = ce_node.item()
    kl = max(kl_node.item(), 0.0)
    if not (math.isfinite(ce) and math.isfinite(kl)):
        raise NonFiniteLoss(f"ce={ce} kl={kl}")

    ce_node.backward()
    ce_grads = {
        name: (np.array(a.grad if a.grad is not None else np.zeros_like(a.data)),
               np.array(b.grad if b.grad is not None else np.zeros_like(b.data)))
        for name, (a, b) in atensors.items()
    }
    f = sum(float((ga**2).sum() + (gb**2).sum()) for ga, gb in ce_grads.values())

    prob_current = math.exp(-ce)
    prob_pretrained = math.exp(pre_logp_total / n_positions)
    w = kr_weight(
        KRWeightInputs(grad_sq_norm=f, prob_pretrained=prob_pretrained,
                       prob_current=prob_current),
        gamma,
    )

    _clear(ce_node, kl_node)
    kl_node.backward()
    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for name, (a, b) in atensors.items():
        ga_kl = a.grad if a.grad is not None else np.zeros_like(a.data)
        gb_kl = b.grad if b.grad is not None else np.zeros_like(b.data)
        ga = (1.0 - w) * ce_grads[name][0] + w * ga_kl
        gb = (1.0 - w) * ce_grads[name][1] + w * gb_kl
        if not (np.all(np.isfinite(ga)) and np.all(np.isfinite(gb))):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        grads[name] = (ga, gb)

    stats = BatchStats(
        ce=ce, kl=kl, kr=kr_loss(ce, kl, w), w=w,
        grad_sq_norm=f, prob_pretrained=prob_pretrained, prob_current=prob_current,
    )
    return grads, stats


def _grad_inf_norms(grads: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> tuple[float, float]:
    norm_a = max((float(np.abs(ga).max()) if ga.size else 0.0) for ga, _ in grads.values())
    norm_b = max((float(np.abs(gb).max()) if gb.size else 0.0) for _, gb in grads.values())
    return norm_a, norm_b


def train_loop(
    params: LMParams,
    adapters: Mapping[str, LoraAdapter],
    data: MixedDataset,
    config: KRConfig,
    tokenizer: Tokenizer,
    context_for: Optional[Callable[[QARecord], Optional[str]]] = None,
    log_path: Optional[str | Path] = None,
) -> tuple[dict[str, LoraAdapter], TrainState]:
    """Mini-batch descent on the adapters until the gradient inf-norm
    drops below grad_tolerance, max_steps is hit, or epochs complete.

    Returns trained copies; the inputs (base weights and the passed
    adapters) are left untouched.
    """
    if len(data) == 0:
        raise EmptyDataset("training dataset is empty")
    tuned = {name: a.copy() for name, a in adapters.items()}
    state = TrainState()
    if config.max_steps == 0:
        return tuned, state

    encoded = [
        encode_qa(tokenizer, rec, config.max_length,
                  context_for(rec) if context_for else None)
        for rec in data.records
    ]
    pre_cache: dict[int, np.ndarray] = {}
    step = 0
    try:
        for epoch in range(config.epochs):
            order = list(range(len(encoded)))
            random.Random(f"{data.seed}:{epoch}").shuffle(order)
            for start in range(0, len(order), config.batch_size):
                chosen = order[start : start + config.batch_size]
                batch = [encoded[i] for i in chosen]
                for i in chosen:
                    if i not in pre_cache:
                        pre_cache[i] = pretrained_reference(params, encoded[i])
                grads, stats = kr_gradients(
                    params, tuned, batch, config.gamma,
                    pretrained_rows=[pre_cache[i] for i in chosen],
                )
                norm_a, norm_b = _grad_inf_norms(grads)
                for name, (ga, gb) in grads.items():
                    tuned[name].a -= config.learning_rate * ga
                    tuned[name].b -= config.learning_rate * gb
                step += 1
                state.record(StepRecord(step, stats.ce, stats.kl, stats.kr,
                                        stats.w, norm_a, norm_b))
                if max(norm_a, norm_b) < config.grad_tolerance:
                    state.converged = True
                    raise StopIteration
                if step >= config.max_steps:
                    raise StopIteration
    except StopIteration:
        pass
    except NonFiniteLoss as exc:
        exc.state = state  # type: ignore[attr-defined]
        raise
    if log_path is not None:
        state.write_csv(log_path)
    return tuned, state


def evaluate_ce(
    params: LMParams,
    adapters: Optional[Mapping[str, LoraAdapter]],
    examples: Iterable[Example],
) -> float:
    """Mean per-token cross-entropy over (prompt, continuation) pairs."""
    ptensors = param_tensors(params)
    atensors = _adapter_tensors(adapters, trainable=False) if adapters else None
    total, count = 0.0, 0
    for prompt, cont in examples:
        full = list(prompt) + list(cont)
        logits = lm_forward_graph(params, ptensors, full[:-1], atensors).data
        logp = _log_softmax_np(logits)
        positions = np.arange(len(prompt) - 1, len(full) - 1)
        total += float(-logp[positions, cont].sum())
        count += len(cont)
    if count == 0:
        raise EmptyDataset("no continuation tokens to score")
    return total / count


# -- base-model fitting (full parameters, plain cross-entropy, Adam) --------

def encode_records(
    tokenizer: Tokenizer,
    records: Sequence[QARecord],
    max_length: int = 128,
    context_for: Optional[Callable[[QARecord], Optional[str]]] = None,
) -> list[Example]:
    return [
        encode_qa(tokenizer, rec, max_length,
                  context_for(rec) if context_for else None)
        for rec in records
    ]


def fit_lm(
    params: LMParams,
    examples: Sequence[Example],
    steps: int,
    batch_size: int = 16,
    learning_rate: float = 5e-3,
    lr_decay: float = 0.8,
    seed: int = 0,
) -> list[float]:
    """Adam over all weights with linear learning-rate decay; mutates
    params in place and returns the per-step loss history. This is how
    base models are produced in-artifact (no external weights are ever
    loaded)."""
    if not examples:
        raise EmptyDataset("no examples to fit")
    rng = random.Random(f"fit:{seed}")
    m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    v = {k: np.zeros_like(vv) for k, vv in params.tensors.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    history: list[float] = []
    for step in range(1, steps + 1):
        lr = learning_rate * (1.0 - lr_decay * step / steps)
        batch = [examples[rng.randrange(len(examples))] for _ in range(batch_size)]
        ptensors = param_tensors(params, trainable=True)
        picked_parts = []
        n_positions = 0
        for prompt, cont in batch:
            full = list(prompt) + list(cont)
            logits = lm_forward_graph(params, ptensors, full[:-1], None)
            logp = ad.log_softmax(logits)
            rows = ad.gather_rows(logp, list(range(len(prompt) - 1, len(full) - 1)))
            picked_parts.append(ad.pick_per_row(rows, cont))
            n_positions += len(cont)
        loss = -ad.sum_all(ad.concat_rows(picked_parts)) / float(n_positions)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLoss(f"loss {value} at step {step}")
        history.append(value)
        loss.backward()
        for name, tensor in ptensors.items():
            grad = tensor.grad
            if grad is None:
                continue
            m[name] = beta1 * m[name] + (1 - beta1) * grad
            v[name] = beta2 * v[name] + (1 - beta2) * grad**2
            m_hat = m[name] / (1 - beta1**step)
            v_hat = v[name] / (1 - beta2**step)
            params.tensors[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return history


# -- classifier-head training (closed-form gradients) ------------------------

ClassifierExample = tuple[np.ndarray, int]  # (input vector, label index)


def classifier_kr_gradients(
    head: ClassifierHead,
    batch: Sequence[ClassifierExample],
    gamma: float,
) -> tuple[np.ndarray, np.ndarray, BatchStats]:
    """Combined (grad_A, grad_B) for the classifier adapter on one batch.

    The pretrained reference is the frozen base map (zero adapter).
    Gradients are the exact softmax-linear forms: for logits L and
    distribution p, d(ce)/dL = p - onehot and d(kl)/dL = p - p_pre.
    """
    if not batch:
        raise EmptyDataset("empty batch")
    a, b = head.adapter.a, head.adapter.b
    z = np.stack([vec for vec, _ in batch])
    labels = np.array([label for _, label in batch], dtype=np.intp)
    logits = z @ head.w0.T + (z @ a.T) @ b.T + head.bias
    pre_logits = z @ head.w0.T + head.bias
    logp = _log_softmax_np(logits)
    pre_logp = _log_softmax_np(pre_logits)
    probs, pre_probs = np.exp(logp), np.exp(pre_logp)
    n = len(batch)

    ce = float(-logp[np.arange(n), labels].mean())
    kl = max(float((pre_probs * (pre_logp - logp)).sum(axis=1).mean()), 0.0)
    if not (math.isfinite(ce) and math.isfinite(kl)):
        raise NonFiniteLoss(f"ce={ce} kl={kl}")

    dce = probs.copy()
    dce[np.arange(n), labels] -= 1.0
    dce /= n
    ga_ce = b.T @ dce.T @ z
    gb_ce = dce.T @ (z @ a.T)
    f = float((ga_ce**2).sum() + (gb_ce**2).sum())

    w = kr_weight(
        KRWeightInputs(
            grad_sq_norm=f,
            prob_pretrained=math.exp(float(pre_logp[np.arange(n), labels].mean())),
            prob_current=math.exp(-ce),
        ),
        gamma,
    )
    dkl = (probs - pre_probs) / n
    ga = (1.0 - w) * ga_ce + w * (b.T @ dkl.T @ z)
    gb = (1.0 - w) * gb_ce + w * (dkl.T @ (z @ a.T))
    if not (np.all(np.isfinite(ga)) and np.all(np.isfinite(gb))):
        raise NonFiniteGradient("non-finite classifier gradient")
    stats = BatchStats(
        ce=ce, kl=kl, kr=kr_loss(ce, kl, w), w=w, grad_sq_norm=f,
        prob_pretrained=math.exp(float(pre_logp[np.arange(n), labels].mean())),
        prob_current=math.exp(-ce),
    )
    return ga, gb, stats


def train_classifier_head(
    head: ClassifierHead,
    examples: Sequence[ClassifierExample],
    config: KRConfig,
    seed: int = 0,
) -> tuple[ClassifierHead, TrainState]:
    """The iterative loop on the classifier: descend until the adapter
    gradients vanish or the step budget runs out."""
    if not examples:
        raise EmptyDataset("no classifier examples")
    tuned = head.copy()
    state = TrainState()
    step = 0
    for epoch in range(config.epochs):
        order = list(range(len(examples)))
        random.Random(f"{seed}:{epoch}").shuffle(order)
        for start in range(0, len(order), config.batch_size):
            if step >= config.max_steps:
                return tuned, state
            batch = [examples[i] for i in order[start : start + config.batch_size]]
            ga, gb, stats = classifier_kr_gradients(tuned, batch, config.gamma)
            tuned.adapter.a -= config.learning_rate * ga
            tuned.adapter.b -= config.learning_rate * gb
            step += 1
            norm_a = float(np.abs(ga).max()) if ga.size else 0.0
            norm_b = float(np.abs(gb).max()) if gb.size else 0.0
            state.record(StepRecord(step, stats.ce, stats.kl, stats.kr,
                                    stats.w, norm_a, norm_b))
            if max(norm_a, norm_b) < config.grad_tolerance:
                state.converged = True
                return tuned, state
    return tuned, state
