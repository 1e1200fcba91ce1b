from __future__ import annotations

from pathlib import Path

import numpy as np

from src.errors import DimensionError, FormatError


def encode_pgm(grid: np.ndarray) -> bytes:
    """Binary P5, maxval 255, pixel = round(p * 255)."""
    if grid.ndim != 2:
        raise DimensionError(f"bad grid shape {grid.shape} (expected 2-D)")
    pixels = np.rint(np.clip(grid, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = grid.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def decode_pgm(data: bytes, path: str | None = None) -> np.ndarray:
    """Pixels as uint8 (H, W)."""
    fields: list[tuple[bytes, int]] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", pos, path)
        fields.append((data[start:pos], start))
    (magic, _), (raw_width, width_at), (raw_height, height_at), (maxval, maxval_at) = fields
    if magic != b"P5":
        raise FormatError(f"bad PGM magic {magic!r} (expected b'P5')", 0, path)
    for raw, at in ((raw_width, width_at), (raw_height, height_at)):
        if not raw.isdigit() or int(raw) == 0:
            raise FormatError(f"bad PGM size field {raw!r} (expected a positive integer)", at, path)
    if maxval != b"255":
        raise FormatError(f"bad PGM maxval {maxval!r} (expected b'255')", maxval_at, path)
    width, height = int(raw_width), int(raw_height)
    pos += 1
    body = data[pos : pos + width * height]
    if len(body) != width * height:
        raise FormatError("truncated PGM pixels", pos, path)
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def write_pgm(path: str | Path, grid: np.ndarray) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(encode_pgm(grid))
    return out


def write_pgm_stack(out_dir: str | Path, grids: np.ndarray, prefix: str) -> list[Path]:
    """One file per frame: ``<prefix>_<frame:03d>.pgm``."""
    out = Path(out_dir)
    return [write_pgm(out / f"{prefix}_{t:03d}.pgm", grid) for t, grid in enumerate(grids)]


def read_pgm(path: str | Path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes(), str(path))
