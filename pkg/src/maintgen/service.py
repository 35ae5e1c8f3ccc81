"""HTTP service: JSON API for the chat UI and programmatic clients.

Single process; many concurrent readers against an immutable snapshot,
at most one writer preparing the next one, publication by atomic
reference swap. Every response carries the generation tag of the
snapshot it was answered from. Sessions are stateless: session_id is
echoed for the client's benefit, never stored.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .agents import Phase, run
from .config import AppConfig
from .corpus import Origin, load_documents, load_qa_corpus
from .errors import ConfigError, EmptyQuery, MaintgenError
from .corpus import MixSpec, mix_datasets
from .snapshot import (
    ADAPTERS_FILE,
    Snapshot,
    SnapshotStore,
    build_snapshot,
    ingest_documents,
    save_artifacts,
)
from .agents import ToolRegistry
from .training import init_adapters, train_loop
from dataclasses import replace

_CLIENT_ERRORS = (
    "EmptyQuery", "ParseError", "MissingField", "DuplicateId", "ConfigError",
    "InsufficientGeneralData", "InvalidChunkParams", "EmptyIndex", "EmptyDataset",
)


class IngestRequest(BaseModel):
    corpus_path: str


class TrainRequest(BaseModel):
    ratio: str
    gamma: Optional[float] = None
    seed: Optional[int] = None


class QueryRequest(BaseModel):
    query: str
    session_id: Optional[str] = None


def _error_response(exc: MaintgenError) -> JSONResponse:
    status = 400 if exc.code in _CLIENT_ERRORS else 500
    return JSONResponse(status_code=status,
                        content={"error": exc.code, "detail": str(exc)})


def create_app(
    config: AppConfig,
    snapshot: Optional[Snapshot] = None,
    static_dir: Optional[str | Path] = None,
) -> FastAPI:
    """Build the API application around a snapshot store.

    A prebuilt snapshot may be injected (tests, embedded use); otherwise
    it is loaded from config.artifacts_dir or bootstrapped from the
    corpus directory.
    """
    store = SnapshotStore(snapshot or build_snapshot(config))
    writer_lock = threading.Lock()
    app = FastAPI(title="maintgen", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.config = config

    @app.exception_handler(MaintgenError)
    async def handle_maintgen_error(request: Request, exc: MaintgenError):
        return _error_response(exc)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "generation": store.get().generation}

    @app.get("/api/objects")
    def objects() -> dict:
        snap = store.get()
        return {"objects": snap.registry.object_types, "generation": snap.generation}

    @app.post("/api/query")
    def query(body: QueryRequest):
        if not body.query.strip():
            raise EmptyQuery("query must be nonempty")
        snap = store.get()
        result = run(body.query, snap.env(config))
        state = result.state
        citations = (
            [c.to_dict() for c in state.draft.citations]
            if state.phase is Phase.DONE and state.draft is not None
            else []
        )
        routing = state.decision.to_dict() if state.decision else {"kind": "unknown"}
        return {
            "text": result.text,
            "citations": citations,
            "trace": [e.to_dict() for e in state.trace],
            "generation": snap.generation,
            "routing": routing,
            "status": state.phase.value,
            "session_id": body.session_id,
        }

    @app.post("/api/ingest")
    def ingest(body: IngestRequest):
        path = Path(body.corpus_path)
        if path.is_dir():
            path = path / "documents.jsonl"
        if not path.exists():
            raise ConfigError(f"no corpus file at {path}")
        documents = load_documents(path)
        with writer_lock:
            snap = store.get()
            index, chunks, doc_object_types = ingest_documents(
                documents, snap.embedder, config.chunk_size, config.chunk_overlap
            )
            save_artifacts(config.artifacts_dir, index, chunks, doc_object_types,
                           snap.params, snap.tokenizer, snap.adapters)
            published = store.publish(replace(
                snap,
                index=index,
                chunks=chunks,
                doc_object_types=doc_object_types,
                registry=ToolRegistry.build(index, doc_object_types, snap.embedder),
            ))
        return {"generation": published.generation}

    @app.post("/api/train")
    def train(body: TrainRequest):
        spec = MixSpec.parse(body.ratio)
        corpus_dir = Path(config.corpus_dir)
        domain_path = corpus_dir / "qa_domain.jsonl"
        general_path = corpus_dir / "qa_general.jsonl"
        if not domain_path.exists():
            raise ConfigError(f"no domain Q&A at {domain_path}")
        domain = load_qa_corpus(domain_path)
        general = load_qa_corpus(general_path) if general_path.exists() else []
        with writer_lock:
            snap = store.get()
            seed = body.seed if body.seed is not None else config.seed
            mixed = mix_datasets(
                [r for r in domain if r.origin is Origin.DOMAIN],
                [r for r in general if r.origin is Origin.GENERAL],
                spec, seed,
            )
            kr = config.kr_config(gamma=body.gamma)
            adapters = snap.adapters or init_adapters(snap.params, kr.rank, seed)
            report_dir = Path(config.report_dir)
            report_dir.mkdir(parents=True, exist_ok=True)
            report_path = report_dir / f"train-{spec.label.replace(':', '_')}.csv"
            tuned, _state = train_loop(snap.params, adapters, mixed, kr,
                                       snap.tokenizer, log_path=report_path)
            save_artifacts(config.artifacts_dir, snap.index, snap.chunks,
                           snap.doc_object_types, snap.params, snap.tokenizer,
                           tuned, adapters_meta=kr.to_meta())
            published = store.publish(replace(snap, adapters=tuned))
        return {"generation": published.generation, "report_path": str(report_path)}

    if static_dir is not None and Path(static_dir).is_dir():
        static_root = Path(static_dir)

        @app.get("/")
        def ui_index() -> FileResponse:
            return FileResponse(static_root / "index.html")

        @app.get("/assets/{asset_path:path}")
        def ui_asset(asset_path: str) -> FileResponse:
            target = (static_root / "assets" / asset_path).resolve()
            if not str(target).startswith(str((static_root / "assets").resolve())):
                raise ConfigError("asset path escapes the static directory")
            return FileResponse(target)

    return app


def serve(config: AppConfig, static_dir: Optional[str | Path] = None) -> None:
    """Run the service until interrupted (blocking)."""
    import uvicorn

    app = create_app(config, static_dir=static_dir)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port,
                log_level="info")
