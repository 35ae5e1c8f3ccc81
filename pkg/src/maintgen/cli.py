"""Command-line interface: ingest, train, query, sweep, eval, serve.

Exit codes: 0 success, 1 usage error (help printed to stderr),
2 runtime failure (error message printed to stderr).
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import Optional

import click

from .config import AppConfig, resolve_config
from .corpus import MixSpec, Origin, load_documents, load_qa_corpus
from .errors import EmptyIndex, MaintgenError
from .harness import ExperimentReport, ReportRow, ratio_sweep
from .metrics import bleu, embed_score, rouge_l, rouge_n


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Path to a JSON config file (overrides LLMR_CONFIG).")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str]) -> None:
    """Maintenance scheme generation toolkit."""
    ctx.obj = resolve_config(config_path)


@cli.command()
@click.option("--corpus", "corpus_path", type=click.Path(), default=None,
              help="Documents JSONL (defaults to <corpus_dir>/documents.jsonl).")
@click.option("--chunk-size", type=int, default=None)
@click.option("--chunk-overlap", type=int, default=None)
@click.pass_obj
def ingest(config: AppConfig, corpus_path: Optional[str],
           chunk_size: Optional[int], chunk_overlap: Optional[int]) -> None:
    """Build the vector index from a document corpus."""
    from .embedding import HashEmbedder
    from .snapshot import ingest_documents, save_artifacts

    path = Path(corpus_path) if corpus_path else Path(config.corpus_dir) / "documents.jsonl"
    documents = load_documents(path)
    embedder = HashEmbedder(dim=config.embed_dim)
    index, chunks, doc_object_types = ingest_documents(
        documents, embedder,
        chunk_size if chunk_size is not None else config.chunk_size,
        chunk_overlap if chunk_overlap is not None else config.chunk_overlap,
    )
    save_artifacts(config.artifacts_dir, index, chunks, doc_object_types)
    click.echo(f"ingested {len(documents)} documents into {len(index)} chunks "
               f"under {config.artifacts_dir}")


@cli.command()
@click.option("--ratio", default="1:7", show_default=True,
              help="domain:general mixing ratio.")
@click.option("--gamma", type=str, default=None,
              help="Retention balance (number or 'inf' for pure task loss).")
@click.option("--rank", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_obj
def train(config: AppConfig, ratio: str, gamma: Optional[str], rank: Optional[int],
          lr: Optional[float], epochs: Optional[int], batch: Optional[int],
          seed: Optional[int]) -> None:
    """Fine-tune adapters on the ratio-mixed corpus Q&A."""
    import dataclasses

    from .corpus import mix_datasets
    from .snapshot import build_snapshot, save_artifacts
    from .training import init_adapters, train_loop

    overrides = {}
    if lr is not None:
        overrides["learning_rate"] = lr
    if epochs is not None:
        overrides["epochs"] = epochs
    if batch is not None:
        overrides["batch_size"] = batch
    if rank is not None:
        overrides["rank"] = rank
    if seed is not None:
        overrides["seed"] = seed
    config = dataclasses.replace(config, **overrides)
    gamma_value = None
    if gamma is not None:
        gamma_value = math.inf if gamma.lower() == "inf" else float(gamma)

    spec = MixSpec.parse(ratio)
    corpus_dir = Path(config.corpus_dir)
    domain = [r for r in load_qa_corpus(corpus_dir / "qa_domain.jsonl")
              if r.origin is Origin.DOMAIN]
    general_path = corpus_dir / "qa_general.jsonl"
    general = [r for r in load_qa_corpus(general_path)
               if r.origin is Origin.GENERAL] if general_path.exists() else []

    snap = build_snapshot(config)
    mixed = mix_datasets(domain, general, spec, config.seed)
    kr = config.kr_config(gamma=gamma_value)
    adapters = snap.adapters or init_adapters(snap.params, kr.rank, config.seed)
    report_dir = Path(config.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    log_path = report_dir / f"train-{spec.label.replace(':', '_')}.csv"
    tuned, state = train_loop(snap.params, adapters, mixed, kr, snap.tokenizer,
                              log_path=log_path)
    save_artifacts(config.artifacts_dir, snap.index, snap.chunks,
                   snap.doc_object_types, snap.params, snap.tokenizer,
                   tuned, adapters_meta=kr.to_meta())
    click.echo(f"trained {state.step_count} steps on {len(mixed)} records "
               f"(ratio {spec.label}); log at {log_path}")


@cli.command()
@click.argument("question")
@click.option("--k", type=int, default=None, help="Chunks to retrieve.")
@click.option("--greedy", is_flag=True, help="Force greedy decoding.")
@click.pass_obj
def query(config: AppConfig, question: str, k: Optional[int], greedy: bool) -> None:
    """Answer one maintenance question and print citations + trace."""
    import dataclasses

    from .agents import run
    from .model import SamplerConfig
    from .snapshot import build_snapshot

    if k is not None:
        config = dataclasses.replace(config, k=k)
    snap = build_snapshot(config)
    if snap.index.retrievable_count == 0:
        raise EmptyIndex("the vector index is empty; run ingest first")
    sampler = SamplerConfig(temperature=0.0, max_new_tokens=config.max_new_tokens,
                            seed=config.seed) if greedy else config.sampler()
    result = run(question, snap.env(config, sampler))
    click.echo(result.text)
    if result.done and result.state.draft is not None:
        click.echo("citations:")
        for c in result.state.draft.citations:
            click.echo(f"  {c.doc_id}#{c.seq}  prior={c.prior:.3f}  "
                       f"log p={c.cond_log_prob:.3f}")
    click.echo("trace:")
    for event in result.trace:
        click.echo(f"  [{event.step}] agent{event.agent}: {event.action}")


@cli.command()
@click.option("--ratios", default="1:0,1:1,1:2,1:5,1:7,1:10", show_default=True,
              help="Comma-separated domain:general ratios.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Report directory (defaults to report_dir).")
@click.pass_obj
def sweep(config: AppConfig, ratios: str, seed: Optional[int],
          out_dir: Optional[str]) -> None:
    """Run the mixing-ratio sweep and emit CSV + text reports."""
    import dataclasses

    from .embedding import HashEmbedder
    from .snapshot import build_snapshot

    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    specs = [MixSpec.parse(r.strip()) for r in ratios.split(",") if r.strip()]
    if not specs:
        raise click.UsageError("no ratios given")
    corpus_dir = Path(config.corpus_dir)
    domain = [r for r in load_qa_corpus(corpus_dir / "qa_domain.jsonl")
              if r.origin is Origin.DOMAIN]
    general_path = corpus_dir / "qa_general.jsonl"
    general = [r for r in load_qa_corpus(general_path)
               if r.origin is Origin.GENERAL] if general_path.exists() else []

    # Hold out every fourth record of each pool as the test sets.
    domain_train = [r for i, r in enumerate(domain) if i % 4 != 3]
    domain_test = [r for i, r in enumerate(domain) if i % 4 == 3]
    general_train = [r for i, r in enumerate(general) if i % 4 != 3]
    general_test = [r for i, r in enumerate(general) if i % 4 == 3]

    snap = build_snapshot(config)
    report = ratio_sweep(
        base_params=snap.params,
        domain=domain_train,
        general=general_train,
        ratios=specs,
        config=config.kr_config(),
        testsets={"domain": domain_test, "general": general_test},
        tokenizer=snap.tokenizer,
        embedder=HashEmbedder(dim=config.embed_dim),
        seed=config.seed,
    )
    csv_path, txt_path = report.write(out_dir or config.report_dir)
    click.echo(f"wrote {csv_path} and {txt_path} "
               f"({len(report.rows)} rows, {report.runtime_seconds:.1f}s)")
    if report.aborted:
        raise MaintgenError(f"sweep aborted: {report.aborted}")


@cli.command("eval")
@click.option("--predictions", type=click.Path(exists=False), required=True,
              help="JSONL with fields: candidate, reference.")
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.pass_obj
def eval_cmd(config: AppConfig, predictions: str, out_dir: Optional[str]) -> None:
    """Score a predictions file with all text metrics."""
    from .embedding import HashEmbedder

    embedder = HashEmbedder(dim=config.embed_dim)
    rows: list[tuple[str, str]] = []
    with open(predictions, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "candidate" not in obj or "reference" not in obj:
                raise MaintgenError(
                    f"line {lineno}: need 'candidate' and 'reference' fields"
                )
            rows.append((str(obj["candidate"]), str(obj["reference"])))
    if not rows:
        raise MaintgenError("predictions file is empty")

    sums = {"rouge1_f1": 0.0, "rouge2_f1": 0.0, "rouge_l_f1": 0.0, "bleu": 0.0,
            "embed_recall": 0.0, "embed_precision": 0.0, "embed_f1": 0.0}
    for cand, ref in rows:
        sums["rouge1_f1"] += rouge_n(cand, ref, 1).f1
        sums["rouge2_f1"] += rouge_n(cand, ref, 2).f1
        sums["rouge_l_f1"] += rouge_l(cand, ref).f1
        sums["bleu"] += bleu(cand, ref).score
        es = embed_score(cand, ref, embedder)
        sums["embed_recall"] += es.recall
        sums["embed_precision"] += es.precision
        sums["embed_f1"] += es.f1
    report = ExperimentReport(rows=[
        ReportRow("predictions", "all", name, total / len(rows))
        for name, total in sums.items()
    ])
    click.echo(report.to_text_table(), nl=False)
    if out_dir:
        csv_path, txt_path = report.write(out_dir, stem="eval")
        click.echo(f"wrote {csv_path} and {txt_path}")


@cli.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="Directory with the built chat UI to serve at /.")
@click.pass_obj
def serve(config: AppConfig, host: Optional[str], port: Optional[int],
          static_dir: Optional[str]) -> None:
    """Start the HTTP service."""
    import dataclasses

    from .service import serve as run_service

    overrides = {}
    if host:
        overrides["listen_host"] = host
    if port:
        overrides["listen_port"] = port
    config = dataclasses.replace(config, **overrides)
    run_service(config, static_dir=static_dir)


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False, prog_name="maintgen")
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_help(), err=True)
        return 1
    except MaintgenError as exc:
        click.echo(f"error: {exc.code}: {exc}", err=True)
        return 2
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
