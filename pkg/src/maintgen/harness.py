"""Experiment harness: the data-mixing ratio sweep and report emission.

For each ratio the harness mixes the pools, trains adapters from one
shared initialization, and scores the tuned model on every test set with
generation metrics and held-out cross-entropy. Reports are emitted as
CSV (config,testset,metric,value) and an aligned text table; identical
seeds produce byte-identical files (wall-clock time is kept out of them).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .corpus import MixSpec, QARecord, mix_datasets
from .embedding import Embedder
from .errors import MaintgenError
from .lora import LoraAdapter
from .metrics import bleu, embed_score, rouge_l, rouge_n
from .model import LMParams, SamplerConfig, build_prompt, sample
from .tokenizer import Tokenizer
from .training import KRConfig, encode_records, evaluate_ce, init_adapters, train_loop

METRIC_ORDER = (
    "rouge1_f1", "rouge2_f1", "rouge_l_f1", "bleu",
    "embed_recall", "embed_precision", "embed_f1", "ce",
)


@dataclass(frozen=True)
class ReportRow:
    config: str
    testset: str
    metric: str
    value: float


@dataclass
class ExperimentReport:
    rows: list[ReportRow] = field(default_factory=list)
    seed: int = 0
    runtime_seconds: float = 0.0
    aborted: Optional[str] = None

    def to_csv(self) -> str:
        lines = ["config,testset,metric,value"]
        for row in self.rows:
            lines.append(f"{row.config},{row.testset},{row.metric},{row.value!r}")
        return "\n".join(lines) + "\n"

    def to_text_table(self) -> str:
        headers = ("config", "testset", "metric", "value")
        cells = [
            (r.config, r.testset, r.metric, f"{r.value:.6f}") for r in self.rows
        ]
        widths = [
            max(len(headers[i]), *(len(c[i]) for c in cells)) if cells else len(headers[i])
            for i in range(4)
        ]
        def fmt(row: tuple[str, str, str, str]) -> str:
            return "  ".join(col.ljust(widths[i]) for i, col in enumerate(row)).rstrip()
        lines = [fmt(headers), fmt(tuple("-" * w for w in widths))]
        lines.extend(fmt(c) for c in cells)
        if self.aborted:
            lines.append(f"(aborted: {self.aborted})")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "sweep") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{stem}.csv"
        txt_path = out_dir / f"{stem}.txt"
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        txt_path.write_text(self.to_text_table(), encoding="utf-8")
        return csv_path, txt_path

    def value(self, config: str, testset: str, metric: str) -> float:
        for row in self.rows:
            if (row.config, row.testset, row.metric) == (config, testset, metric):
                return row.value
        raise KeyError((config, testset, metric))


def evaluate_testset(
    params: LMParams,
    adapters: Optional[Mapping[str, LoraAdapter]],
    records: Sequence[QARecord],
    tokenizer: Tokenizer,
    embedder: Embedder,
    max_new_tokens: int = 24,
    max_length: int = 128,
) -> dict[str, float]:
    """Greedy-generate an answer per question and average all metrics,
    plus teacher-forced cross-entropy on the references."""
    from .training import _adapter_tensors

    atensors = _adapter_tensors(adapters, trainable=False) if adapters else None
    sampler = SamplerConfig(temperature=0.0, max_new_tokens=max_new_tokens, seed=0)
    sums = {name: 0.0 for name in METRIC_ORDER if name != "ce"}
    for rec in records:
        prompt = build_prompt(tokenizer, rec.question)
        text = tokenizer.decode(sample(params, prompt, sampler, tokenizer.eos_id, atensors))
        sums["rouge1_f1"] += rouge_n(text, rec.answer, 1).f1
        sums["rouge2_f1"] += rouge_n(text, rec.answer, 2).f1
        sums["rouge_l_f1"] += rouge_l(text, rec.answer).f1
        sums["bleu"] += bleu(text, rec.answer).score
        es = embed_score(text, rec.answer, embedder)
        sums["embed_recall"] += es.recall
        sums["embed_precision"] += es.precision
        sums["embed_f1"] += es.f1
    out = {name: total / len(records) for name, total in sums.items()}
    out["ce"] = evaluate_ce(params, adapters,
                            encode_records(tokenizer, records, max_length))
    return out


def ratio_sweep(
    base_params: LMParams,
    domain: Sequence[QARecord],
    general: Sequence[QARecord],
    ratios: Sequence[MixSpec],
    config: KRConfig,
    testsets: Mapping[str, Sequence[QARecord]],
    tokenizer: Tokenizer,
    embedder: Embedder,
    seed: int = 0,
    max_new_tokens: int = 24,
) -> ExperimentReport:
    """Train one adapter set per mixing ratio and score each on every
    test set. Training failures abort the sweep, returning the rows
    finished so far with the abort reason recorded."""
    report = ExperimentReport(seed=seed)
    started = time.perf_counter()
    for spec in ratios:
        try:
            mixed = mix_datasets(domain, general, spec, seed)
            adapters = init_adapters(base_params, config.rank, seed)
            tuned, _state = train_loop(base_params, adapters, mixed, config, tokenizer)
            for testset_name, records in testsets.items():
                scores = evaluate_testset(
                    base_params, tuned, records, tokenizer, embedder,
                    max_new_tokens=max_new_tokens, max_length=config.max_length,
                )
                for metric in METRIC_ORDER:
                    report.rows.append(
                        ReportRow(spec.label, testset_name, metric, scores[metric])
                    )
        except MaintgenError as exc:
            report.aborted = f"{spec.label}: {exc.code}: {exc}"
            break
    report.runtime_seconds = time.perf_counter() - started
    return report
