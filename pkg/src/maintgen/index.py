"""Exact maximum-inner-product vector index with binary persistence.

The index is immutable once built: concurrent readers need no
coordination, and re-ingestion publishes a fresh index. Lookups are
exhaustive exact dot products; at desk scale this is affordable and
keeps retrieval trivially testable against a brute-force oracle.

File format (little-endian): magic "LMRIDX", u32 version, u32 dim,
u64 count, then per entry (u16 doc_id length, doc_id bytes, u32 seq,
dim x f64), and a trailing CRC-32 over all preceding bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Chunk
from .embedding import Embedder
from .errors import (
    ChecksumMismatch,
    DimMismatch,
    DuplicateChunkRef,
    FormatVersionMismatch,
    IndexIoError,
)

MAGIC = b"LMRIDX"
FORMAT_VERSION = 1

ChunkRef = tuple[str, int]


@dataclass(frozen=True)
class ScoredHit:
    chunk_ref: ChunkRef
    inner_product: float


class VectorIndex:
    """Immutable (chunk_ref, vector) table over a fixed dimension.

    Entries with zero vectors (empty chunks) are stored but excluded from
    ranking so retrieval never cites contentless text.
    """

    def __init__(self, dim: int, refs: Sequence[ChunkRef], vectors: np.ndarray):
        if vectors.shape != (len(refs), dim):
            raise DimMismatch(
                f"vectors shape {vectors.shape} != ({len(refs)}, {dim})"
            )
        if len(set(refs)) != len(refs):
            raise DuplicateChunkRef("chunk refs must be unique")
        self.dim = dim
        self.refs: tuple[ChunkRef, ...] = tuple((str(d), int(s)) for d, s in refs)
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        self.vectors.setflags(write=False)
        self._retrievable = np.linalg.norm(self.vectors, axis=1) > 0.0 if len(refs) else np.zeros(0, bool)

    def __len__(self) -> int:
        return len(self.refs)

    @property
    def retrievable_count(self) -> int:
        return int(self._retrievable.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VectorIndex):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.refs == other.refs
            and self.vectors.shape == other.vectors.shape
            and bool(np.all(self.vectors == other.vectors))
        )

    def subset(self, doc_ids: Iterable[str]) -> "VectorIndex":
        """Partition of the index restricted to the given documents."""
        wanted = set(doc_ids)
        keep = [i for i, (doc_id, _) in enumerate(self.refs) if doc_id in wanted]
        refs = [self.refs[i] for i in keep]
        vectors = self.vectors[keep] if keep else np.zeros((0, self.dim))
        return VectorIndex(self.dim, refs, vectors)


def build_index(chunks: Sequence[Chunk], embedder: Embedder) -> VectorIndex:
    refs: list[ChunkRef] = []
    seen: set[ChunkRef] = set()
    rows: list[np.ndarray] = []
    for chunk in chunks:
        ref = chunk.ref
        if ref in seen:
            raise DuplicateChunkRef(f"duplicate chunk ref {ref}")
        seen.add(ref)
        refs.append(ref)
        rows.append(embedder.embed(chunk.text))
    vectors = np.vstack(rows) if rows else np.zeros((0, embedder.dim))
    return VectorIndex(embedder.dim, refs, vectors)


def mips_top_k(index: VectorIndex, query: np.ndarray, k: int) -> list[ScoredHit]:
    """Exact top-k by inner product, ties broken by (doc_id, seq) ascending."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise DimMismatch(f"query shape {query.shape} != ({index.dim},)")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        return []
    scores = index.vectors @ query
    ranked = sorted(
        (
            (-scores[i], index.refs[i][0], index.refs[i][1], i)
            for i in range(len(index))
            if index._retrievable[i]
        )
    )
    return [
        ScoredHit(chunk_ref=index.refs[i], inner_product=float(-neg))
        for neg, _, _, i in ranked[:k]
    ]


def save_index(index: VectorIndex, path: str | Path) -> None:
    parts = [MAGIC, struct.pack("<IIQ", FORMAT_VERSION, index.dim, len(index))]
    for (doc_id, seq), vector in zip(index.refs, index.vectors):
        doc_bytes = doc_id.encode("utf-8")
        parts.append(struct.pack("<H", len(doc_bytes)))
        parts.append(doc_bytes)
        parts.append(struct.pack("<I", seq))
        parts.append(vector.astype("<f8").tobytes())
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    try:
        Path(path).write_bytes(payload + struct.pack("<I", crc))
    except OSError as exc:
        raise IndexIoError(str(exc)) from exc


def load_index(path: str | Path) -> VectorIndex:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IndexIoError(str(exc)) from exc
    if len(blob) < 4:
        raise ChecksumMismatch("file too short to hold a checksum")
    payload, crc_bytes = blob[:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise ChecksumMismatch("CRC-32 mismatch (truncated or corrupted file)")
    header_size = len(MAGIC) + struct.calcsize("<IIQ")
    if len(payload) < header_size or payload[: len(MAGIC)] != MAGIC:
        raise FormatVersionMismatch("not an index file (bad magic)")
    version, dim, count = struct.unpack_from("<IIQ", payload, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    offset = header_size
    refs: list[ChunkRef] = []
    vectors = np.zeros((count, dim), dtype=np.float64)
    vec_bytes = dim * 8
    try:
        for row in range(count):
            (id_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            doc_id = payload[offset : offset + id_len].decode("utf-8")
            offset += id_len
            (seq,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            vectors[row] = np.frombuffer(payload, dtype="<f8", count=dim, offset=offset)
            offset += vec_bytes
            refs.append((doc_id, seq))
    except (struct.error, ValueError) as exc:
        raise ChecksumMismatch(f"malformed entry table: {exc}") from exc
    if offset != len(payload):
        raise ChecksumMismatch("trailing bytes after entry table")
    return VectorIndex(dim, refs, vectors)
