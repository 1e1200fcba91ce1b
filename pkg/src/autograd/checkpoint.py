"""Little-endian tensor checkpoint files.

Layout::

    b"LOPRCKPT"  u32 version  u32 count
    count x ( u16 name_len  name(utf-8)  u8 rank  rank x u32 extent  f64[prod(extents)] )
"""
from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np

from src.common import ByteReader
from src.errors import FormatError

logger = logging.getLogger(__name__)

MAGIC = b"LOPRCKPT"
VERSION = 1


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes, path: str | None = None) -> dict[str, np.ndarray]:
    reader = ByteReader(data, path)
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("bad magic (expected LOPRCKPT)", 0, path)
    version, count = reader.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", len(MAGIC), path)

    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = reader.pos
        (name_len,) = reader.unpack("<H", "name length")
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("name is not utf-8", start + 2, path) from exc
        (rank,) = reader.unpack("<B", "rank")
        shape = reader.unpack(f"<{rank}I", "extents") if rank else ()
        tensors[name] = reader.array("<f8", shape, f"payload of '{name}'").astype(np.float64)
    reader.expect_end()
    return tensors


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(encode_checkpoint(tensors))
    logger.info("saved checkpoint %s (%d tensors)", out, len(tensors))
    return out


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    src = Path(path)
    return decode_checkpoint(src.read_bytes(), str(src))
