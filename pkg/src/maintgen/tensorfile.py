"""Versioned binary container for named float64 tensors plus JSON metadata.

Layout (little-endian): magic "MGTF", u32 version, u32 metadata length,
metadata JSON bytes, u32 tensor count, then per tensor (u16 name length,
name bytes, u8 ndim, ndim x u32 dims, row-major f64 data), and a trailing
CRC-32 over all preceding bytes. Used for model and adapter checkpoints.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, FormatVersionMismatch, IndexIoError

MAGIC = b"MGTF"
FORMAT_VERSION = 1


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        array = np.ascontiguousarray(array, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(array.astype("<f8").tobytes())
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    try:
        Path(path).write_bytes(payload + struct.pack("<I", crc))
    except OSError as exc:
        raise IndexIoError(str(exc)) from exc


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IndexIoError(str(exc)) from exc
    if len(blob) < 4:
        raise ChecksumMismatch("file too short to hold a checksum")
    payload, crc_bytes = blob[:-4], blob[-4:]
    if zlib.crc32(payload) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise ChecksumMismatch("CRC-32 mismatch (truncated or corrupted file)")
    if payload[: len(MAGIC)] != MAGIC:
        raise FormatVersionMismatch("not a tensor file (bad magic)")
    offset = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", payload, offset)
    offset += 8
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    try:
        meta = json.loads(payload[offset : offset + meta_len].decode("utf-8"))
        offset += meta_len
        (count,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", payload, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(
                payload, dtype="<f8", count=size, offset=offset
            ).reshape(shape).copy()
            offset += size * 8
    except (struct.error, ValueError, json.JSONDecodeError) as exc:
        raise ChecksumMismatch(f"malformed tensor table: {exc}") from exc
    if offset != len(payload):
        raise ChecksumMismatch("trailing bytes after tensor table")
    return tensors, meta
