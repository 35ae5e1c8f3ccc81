"""Corpus ingestion, token-window chunking, and ratio-mixed dataset building.

Corpus files are JSON-Lines, one object per line, UTF-8:
  Q&A file:      {"id", "object_type", "question", "answer", "origin"}
  document file: {"id", "object_type", "text"}
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

from .errors import (
    DuplicateId,
    InsufficientGeneralData,
    InvalidChunkParams,
    MissingField,
    ParseError,
)
from .tokenizer import join_tokens, split_text


class Origin(enum.Enum):
    DOMAIN = "domain"
    GENERAL = "general"


@dataclass(frozen=True)
class Document:
    id: str
    object_type: str
    text: str


@dataclass(frozen=True)
class QARecord:
    id: str
    object_type: str
    question: str
    answer: str
    origin: Origin


@dataclass(frozen=True)
class Chunk:
    """A token window of one document; spans are half-open token offsets."""

    doc_id: str
    seq: int
    token_start: int
    token_end: int
    text: str

    @property
    def ref(self) -> tuple[str, int]:
        return (self.doc_id, self.seq)


@dataclass(frozen=True)
class MixSpec:
    """domain_parts : general_parts mixing ratio, e.g. 1:7."""

    domain_parts: int
    general_parts: int

    def __post_init__(self) -> None:
        if self.domain_parts < 1:
            raise ValueError("domain_parts must be >= 1")
        if self.general_parts < 0:
            raise ValueError("general_parts must be >= 0")

    @classmethod
    def parse(cls, label: str) -> "MixSpec":
        """Parse "A:B" (also accepts "A_B")."""
        sep = ":" if ":" in label else "_"
        try:
            a, b = label.split(sep)
            return cls(int(a), int(b))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"bad ratio {label!r}, expected A:B") from exc

    @property
    def label(self) -> str:
        return f"{self.domain_parts}:{self.general_parts}"


@dataclass(frozen=True)
class MixedDataset:
    records: tuple[QARecord, ...]
    spec: MixSpec
    seed: int

    def __len__(self) -> int:
        return len(self.records)


def chunk_text(
    text: str,
    chunk_size: int,
    overlap: int,
    doc_id: str = "",
) -> list[Chunk]:
    """Tile a token stream into overlapping windows.

    Windows advance with stride chunk_size - overlap; the final window is
    truncated rather than padded or dropped. Empty text yields no chunks.
    """
    if chunk_size <= 0 or overlap < 0 or overlap >= chunk_size:
        raise InvalidChunkParams(
            f"need 0 <= overlap < chunk_size, got chunk_size={chunk_size} overlap={overlap}"
        )
    tokens = split_text(text)
    n = len(tokens)
    if n == 0:
        return []
    stride = chunk_size - overlap
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + chunk_size, n)
        chunks.append(
            Chunk(
                doc_id=doc_id,
                seq=len(chunks),
                token_start=start,
                token_end=end,
                text=join_tokens(tokens[start:end]),
            )
        )
        if end == n:
            break
        start += stride
    return chunks


def chunk_document(doc: Document, chunk_size: int, overlap: int) -> list[Chunk]:
    return chunk_text(doc.text, chunk_size, overlap, doc_id=doc.id)


def mix_datasets(
    domain: Sequence[QARecord],
    general: Sequence[QARecord],
    spec: MixSpec,
    seed: int,
) -> MixedDataset:
    """Combine all domain records with ratio-many general records.

    General records are sampled without replacement; the combined order is
    a deterministic shuffle driven by the seed alone.
    """
    for rec in domain:
        if rec.origin is not Origin.DOMAIN:
            raise ValueError(f"record {rec.id} in domain pool has origin {rec.origin}")
    for rec in general:
        if rec.origin is not Origin.GENERAL:
            raise ValueError(f"record {rec.id} in general pool has origin {rec.origin}")
    need = spec.general_parts * len(domain)
    if len(general) < need:
        raise InsufficientGeneralData(
            f"need {need} general records for ratio {spec.label} over "
            f"{len(domain)} domain records, have {len(general)}"
        )
    rng = random.Random(seed)
    sampled = rng.sample(list(general), need)
    combined = list(domain) + sampled
    rng.shuffle(combined)
    return MixedDataset(records=tuple(combined), spec=spec, seed=seed)


_QA_FIELDS = ("id", "object_type", "question", "answer", "origin")
_DOC_FIELDS = ("id", "object_type", "text")


def _parse_line(raw: str, lineno: int) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(lineno, str(exc)) from exc
    if not isinstance(obj, dict):
        raise ParseError(lineno, "expected a JSON object")
    return obj


def load_qa_corpus(path: str | Path) -> list[QARecord]:
    records: list[QARecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            obj = _parse_line(raw, lineno)
            for name in _QA_FIELDS:
                if name not in obj:
                    raise MissingField(name, lineno)
            rec_id = str(obj["id"])
            if rec_id in seen:
                raise DuplicateId(rec_id)
            seen.add(rec_id)
            try:
                origin = Origin(str(obj["origin"]).lower())
            except ValueError as exc:
                raise ParseError(lineno, f"bad origin {obj['origin']!r}") from exc
            question = str(obj["question"])
            answer = str(obj["answer"])
            if not question or not answer:
                raise ParseError(lineno, "question and answer must be nonempty")
            records.append(
                QARecord(
                    id=rec_id,
                    object_type=str(obj["object_type"]),
                    question=question,
                    answer=answer,
                    origin=origin,
                )
            )
    return records


def load_documents(path: str | Path) -> list[Document]:
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            obj = _parse_line(raw, lineno)
            for name in _DOC_FIELDS:
                if name not in obj:
                    raise MissingField(name, lineno)
            doc_id = str(obj["id"])
            if doc_id in seen:
                raise DuplicateId(doc_id)
            seen.add(doc_id)
            if not doc_id or not str(obj["object_type"]):
                raise ParseError(lineno, "id and object_type must be nonempty")
            docs.append(
                Document(
                    id=doc_id,
                    object_type=str(obj["object_type"]),
                    text=str(obj["text"]),
                )
            )
    return docs


def load_corpus(path: str | Path) -> Union[list[QARecord], list[Document]]:
    """Load a JSONL corpus file, dispatching on its first record's shape."""
    with open(path, encoding="utf-8") as fh:
        first = None
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip():
                first = _parse_line(raw, lineno)
                break
    if first is None:
        return []
    if "question" in first:
        return load_qa_corpus(path)
    if "text" in first:
        return load_documents(path)
    raise MissingField("question|text", 1)


def save_jsonl(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def qa_to_jsonl(records: Sequence[QARecord]) -> list[dict]:
    return [
        {
            "id": r.id,
            "object_type": r.object_type,
            "question": r.question,
            "answer": r.answer,
            "origin": r.origin.value,
        }
        for r in records
    ]


def documents_to_jsonl(docs: Sequence[Document]) -> list[dict]:
    return [{"id": d.id, "object_type": d.object_type, "text": d.text} for d in docs]
