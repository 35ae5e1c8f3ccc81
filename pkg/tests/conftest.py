"""Shared fixtures: the synthetic corpora and a trained demo environment.

The demo model takes ~90s to fit, so it is trained once per session and
cached under tests/_cache keyed by a fingerprint of everything that
shapes it; any change to the fixture corpus, tokenizer, model geometry,
or training recipe invalidates the cache automatically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from maintgen.agents import AgentEnv, ToolRegistry
from maintgen.corpus import Chunk, Document, QARecord, chunk_document
from maintgen.embedding import HashEmbedder
from maintgen.fixtures import domain_fixture, fixture_texts, general_fixture
from maintgen.index import VectorIndex, build_index
from maintgen.model import LMParams, SamplerConfig
from maintgen.tokenizer import Tokenizer, build_vocab
from maintgen.training import encode_records, fit_lm

CACHE_DIR = Path(__file__).parent / "_cache"

DEMO_N_PER_OBJECT = 20
DEMO_N_GENERAL = 100
DEMO_MODEL = dict(d_model=64, n_blocks=2, n_heads=4, max_length=128, seed=0)
DEMO_FIT = dict(steps=500, batch_size=16, learning_rate=5e-3, lr_decay=0.8, seed=0)

@dataclass
class DemoEnv:
    domain_qa: list[QARecord]
    documents: list[Document]
    gold: dict[str, str]
    general_qa: list[QARecord]
    tokenizer: Tokenizer
    params: LMParams
    embedder: HashEmbedder
    index: VectorIndex
    chunks: dict[tuple[str, int], Chunk]
    doc_object_types: dict[str, str]
    registry: ToolRegistry
    doc_by_qa: dict[str, Document]

    def agent_env(self, **overrides) -> AgentEnv:
        defaults = dict(
            registry=self.registry,
            chunks=self.chunks,
            params=self.params,
            tokenizer=self.tokenizer,
            embedder=self.embedder,
            sampler=SamplerConfig(temperature=0.0, max_new_tokens=24, seed=0),
        )
        defaults.update(overrides)
        return AgentEnv(**defaults)


def _fingerprint(parts: list) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(json.dumps(part, sort_keys=True, default=str).encode())
    return digest.hexdigest()[:16]


def _cached_model(tag: str, fingerprint: str, train_fn) -> LMParams:
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"{tag}-{fingerprint}.bin"
    if path.exists():
        return LMParams.load(path)
    params = train_fn()
    params.save(path)
    return params


@pytest.fixture(scope="session")
def demo() -> DemoEnv:
    """Fixture corpus + a model fit to reproduce its answers from
    (document, question) prompts, plus index and registry."""
    domain_qa, documents, gold = domain_fixture(DEMO_N_PER_OBJECT)
    general_qa = general_fixture(DEMO_N_GENERAL)
    tokenizer = build_vocab(fixture_texts(domain_qa, general_qa, documents))
    doc_by_qa = {rec.id: doc for rec, doc in zip(domain_qa, documents)}

    def train() -> LMParams:
        params = LMParams.init(tokenizer.size, **DEMO_MODEL)
        examples = encode_records(
            tokenizer, domain_qa, max_length=DEMO_MODEL["max_length"],
            context_for=lambda rec: doc_by_qa[rec.id].text,
        )
        fit_lm(params, examples, **DEMO_FIT)
        return params

    fingerprint = _fingerprint([
        [d.text for d in documents], [r.question for r in domain_qa],
        sorted(tokenizer.vocab), DEMO_MODEL, DEMO_FIT, "demo-v1",
    ])
    params = _cached_model("demo", fingerprint, train)

    embedder = HashEmbedder(dim=256)
    chunks: list[Chunk] = []
    doc_object_types: dict[str, str] = {}
    for doc in documents:
        chunks.extend(chunk_document(doc, 300, 50))
        doc_object_types[doc.id] = doc.object_type
    index = build_index(chunks, embedder)
    registry = ToolRegistry.build(index, doc_object_types, embedder)
    return DemoEnv(
        domain_qa=domain_qa,
        documents=documents,
        gold=gold,
        general_qa=general_qa,
        tokenizer=tokenizer,
        params=params,
        embedder=embedder,
        index=index,
        chunks={c.ref: c for c in chunks},
        doc_object_types=doc_object_types,
        registry=registry,
        doc_by_qa=doc_by_qa,
    )


