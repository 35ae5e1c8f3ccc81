"""Immutable serving snapshots: index + chunks + model + registry.

A snapshot is assembled once, published atomically (a single reference
swap in the store), and never mutated; queries therefore always observe
one coherent generation. Artifacts persist under one directory:

    index.bin      vector index (binary, checksummed)
    chunks.jsonl   chunk texts and spans keyed by (doc_id, seq)
    objects.json   doc_id -> object_type
    model.bin      model weights (named-tensor file)
    vocab.json     tokenizer vocabulary
    adapters.bin   optional tuned adapters
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .agents import AgentEnv, ToolRegistry
from .config import AppConfig
from .corpus import Chunk, Document, chunk_document, load_documents, load_qa_corpus
from .embedding import HashEmbedder
from .errors import ConfigError
from .index import ChunkRef, VectorIndex, build_index, load_index, save_index
from .lora import LoraAdapter, load_adapters, save_adapters
from .model import LMParams, SamplerConfig
from .tokenizer import Tokenizer, build_vocab

INDEX_FILE = "index.bin"
CHUNKS_FILE = "chunks.jsonl"
OBJECTS_FILE = "objects.json"
MODEL_FILE = "model.bin"
VOCAB_FILE = "vocab.json"
ADAPTERS_FILE = "adapters.bin"


@dataclass(frozen=True)
class Snapshot:
    index: VectorIndex
    chunks: dict[ChunkRef, Chunk]
    doc_object_types: dict[str, str]
    registry: ToolRegistry
    params: LMParams
    tokenizer: Tokenizer
    embedder: HashEmbedder
    adapters: Optional[dict[str, LoraAdapter]]
    generation: int

    def env(self, config: AppConfig, sampler: Optional[SamplerConfig] = None) -> AgentEnv:
        return AgentEnv(
            registry=self.registry,
            chunks=self.chunks,
            params=self.params,
            tokenizer=self.tokenizer,
            embedder=self.embedder,
            adapters=self.adapters,
            k=config.k,
            tau=config.tau,
            floor=config.retrieval_floor,
            sampler=sampler or config.sampler(),
        )


class SnapshotStore:
    """Single-writer, many-reader holder with atomic publication."""

    def __init__(self, snapshot: Snapshot):
        self._snapshot = snapshot
        self._lock = threading.Lock()

    def get(self) -> Snapshot:
        return self._snapshot

    def publish(self, snapshot: Snapshot) -> Snapshot:
        with self._lock:
            stamped = replace(snapshot, generation=self._snapshot.generation + 1)
            self._snapshot = stamped
            return stamped


def ingest_documents(
    documents: Sequence[Document],
    embedder: HashEmbedder,
    chunk_size: int,
    chunk_overlap: int,
) -> tuple[VectorIndex, dict[ChunkRef, Chunk], dict[str, str]]:
    chunks: list[Chunk] = []
    doc_object_types: dict[str, str] = {}
    for doc in documents:
        chunks.extend(chunk_document(doc, chunk_size, chunk_overlap))
        doc_object_types[doc.id] = doc.object_type
    index = build_index(chunks, embedder)
    return index, {c.ref: c for c in chunks}, doc_object_types


def save_artifacts(
    directory: str | Path,
    index: VectorIndex,
    chunks: dict[ChunkRef, Chunk],
    doc_object_types: dict[str, str],
    params: Optional[LMParams] = None,
    tokenizer: Optional[Tokenizer] = None,
    adapters: Optional[dict[str, LoraAdapter]] = None,
    adapters_meta: Optional[dict] = None,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_index(index, directory / INDEX_FILE)
    with open(directory / CHUNKS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for ref in index.refs:
            chunk = chunks[ref]
            fh.write(json.dumps({
                "doc_id": chunk.doc_id, "seq": chunk.seq,
                "token_start": chunk.token_start, "token_end": chunk.token_end,
                "text": chunk.text,
            }, ensure_ascii=False) + "\n")
    (directory / OBJECTS_FILE).write_text(
        json.dumps(doc_object_types, ensure_ascii=False, indent=0, sort_keys=True),
        encoding="utf-8",
    )
    if params is not None:
        params.save(directory / MODEL_FILE)
    if tokenizer is not None:
        tokenizer.save(directory / VOCAB_FILE)
    if adapters is not None:
        save_adapters(directory / ADAPTERS_FILE, adapters, config_meta=adapters_meta)


def _load_chunks(path: Path) -> dict[ChunkRef, Chunk]:
    chunks: dict[ChunkRef, Chunk] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            chunk = Chunk(
                doc_id=str(obj["doc_id"]), seq=int(obj["seq"]),
                token_start=int(obj["token_start"]), token_end=int(obj["token_end"]),
                text=str(obj["text"]),
            )
            chunks[chunk.ref] = chunk
    return chunks


def load_snapshot(config: AppConfig, generation: int = 1) -> Snapshot:
    directory = Path(config.artifacts_dir)
    for required in (INDEX_FILE, CHUNKS_FILE, OBJECTS_FILE, MODEL_FILE, VOCAB_FILE):
        if not (directory / required).exists():
            raise ConfigError(f"missing artifact {required} under {directory}")
    embedder = HashEmbedder(dim=config.embed_dim)
    index = load_index(directory / INDEX_FILE)
    chunks = _load_chunks(directory / CHUNKS_FILE)
    doc_object_types = json.loads((directory / OBJECTS_FILE).read_text(encoding="utf-8"))
    adapters = None
    if (directory / ADAPTERS_FILE).exists():
        adapters, _ = load_adapters(directory / ADAPTERS_FILE)
    return Snapshot(
        index=index,
        chunks=chunks,
        doc_object_types=doc_object_types,
        registry=ToolRegistry.build(index, doc_object_types, embedder),
        params=LMParams.load(directory / MODEL_FILE),
        tokenizer=Tokenizer.load(directory / VOCAB_FILE),
        embedder=embedder,
        adapters=adapters,
        generation=generation,
    )


def build_snapshot(config: AppConfig, generation: int = 1) -> Snapshot:
    """Assemble a snapshot from persisted artifacts, bootstrapping any
    missing piece from the corpus directory.

    The index side (index/chunks/objects) and the model side
    (model/vocab/adapters) load independently: an earlier `ingest` is
    honored even when no checkpoint exists yet. Bootstrapping the model
    builds the vocabulary over all corpus text and fits a fresh base
    model on the corpus Q&A for config.pretrain_steps steps (0 keeps it
    untrained); grounding documents are used as generation context
    whenever one contains the reference answer.
    """
    directory = Path(config.artifacts_dir)
    corpus_dir = Path(config.corpus_dir)
    embedder = HashEmbedder(dim=config.embed_dim)

    have_index = all((directory / name).exists()
                     for name in (INDEX_FILE, CHUNKS_FILE, OBJECTS_FILE))
    have_model = all((directory / name).exists()
                     for name in (MODEL_FILE, VOCAB_FILE))
    if have_index and have_model:
        return load_snapshot(config, generation)

    documents: Optional[list[Document]] = None
    if have_index:
        index = load_index(directory / INDEX_FILE)
        chunks = _load_chunks(directory / CHUNKS_FILE)
        doc_object_types = json.loads(
            (directory / OBJECTS_FILE).read_text(encoding="utf-8")
        )
    else:
        docs_path = corpus_dir / "documents.jsonl"
        if not docs_path.exists():
            raise ConfigError(f"no index artifacts and no corpus at {docs_path}")
        documents = load_documents(docs_path)
        index, chunks, doc_object_types = ingest_documents(
            documents, embedder, config.chunk_size, config.chunk_overlap
        )

    adapters = None
    if have_model:
        params = LMParams.load(directory / MODEL_FILE)
        tokenizer = Tokenizer.load(directory / VOCAB_FILE)
        if (directory / ADAPTERS_FILE).exists():
            adapters, _ = load_adapters(directory / ADAPTERS_FILE)
    else:
        if documents is None:
            docs_path = corpus_dir / "documents.jsonl"
            documents = load_documents(docs_path) if docs_path.exists() else []
        qa_records = []
        for name in ("qa_domain.jsonl", "qa_general.jsonl"):
            path = corpus_dir / name
            if path.exists():
                qa_records.extend(load_qa_corpus(path))
        texts = [d.text for d in documents] + [c.text for c in chunks.values()]
        texts.extend(doc_object_types.values())
        for rec in qa_records:
            texts.append(rec.question)
            texts.append(rec.answer)
        if not texts:
            raise ConfigError(f"no corpus text found under {corpus_dir}")
        tokenizer = build_vocab(texts, max_size=config.vocab_size)
        params = LMParams.init(
            vocab_size=tokenizer.size,
            d_model=config.d_model,
            n_blocks=config.n_blocks,
            n_heads=config.n_heads,
            max_length=config.max_length,
            seed=config.seed,
        )
        if qa_records and config.pretrain_steps > 0:
            from .training import encode_records, fit_lm

            by_object: dict[str, list[Document]] = {}
            for doc in documents:
                by_object.setdefault(doc.object_type, []).append(doc)

            def grounding_text(rec) -> Optional[str]:
                for doc in by_object.get(rec.object_type, ()):
                    if rec.answer in doc.text:
                        return doc.text
                return None

            examples = encode_records(
                tokenizer, qa_records, max_length=min(config.max_length, 128),
                context_for=grounding_text,
            )
            fit_lm(params, examples, steps=config.pretrain_steps, seed=config.seed)

    save_artifacts(config.artifacts_dir, index, chunks, doc_object_types,
                   params, tokenizer, adapters)
    return Snapshot(
        index=index,
        chunks=chunks,
        doc_object_types=doc_object_types,
        registry=ToolRegistry.build(index, doc_object_types, embedder),
        params=params,
        tokenizer=tokenizer,
        embedder=embedder,
        adapters=adapters,
        generation=generation,
    )
