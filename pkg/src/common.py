from __future__ import annotations

import csv
import logging
import struct
from pathlib import Path

import numpy as np

from src.errors import FormatError


DEFAULT_RUN_DIR = Path("runs/default")


def ensure_out_dir(path: str | Path = DEFAULT_RUN_DIR) -> Path:
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def write_rows(path: Path, rows: list[dict[str, object]], delimiter: str = ",") -> None:
    if not rows:
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), delimiter=delimiter)
        writer.writeheader()
        writer.writerows(rows)


def read_rows(path: Path, delimiter: str = ",") -> list[dict[str, str]]:
    with path.open("r", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh, delimiter=delimiter))


def setup_logging(log_dir: str | Path, name: str = "ogm_forecast") -> logging.Logger:
    """Console + file logging for one CLI invocation."""
    out = ensure_out_dir(log_dir)
    root = logging.getLogger("src")
    root.setLevel(logging.INFO)
    root.handlers.clear()

    console = logging.StreamHandler()
    console.setLevel(logging.INFO)
    console.setFormatter(logging.Formatter("[%(levelname)s] %(message)s"))

    file_handler = logging.FileHandler(out / f"{name}.log", mode="a", encoding="utf-8")
    file_handler.setLevel(logging.INFO)
    file_handler.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(name)s: %(message)s"))

    root.addHandler(console)
    root.addHandler(file_handler)
    return root


def stream_rng(global_seed: int, index: int, *tags: int) -> np.random.Generator:
    """Independent counter-based stream for (seed, index, tags)."""
    return np.random.default_rng(np.random.SeedSequence([global_seed, index, *tags]))


class ByteReader:
    """Cursor over a little-endian blob; short reads raise :class:`FormatError`."""

    def __init__(self, data: bytes, path: str | None = None) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"truncated {what}", self.pos, self.path)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dtype: str, shape: tuple[int, ...], what: str) -> np.ndarray:
        dt = np.dtype(dtype)
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(count * dt.itemsize, what)
        return np.frombuffer(raw, dtype=dt).reshape(shape)

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise FormatError("trailing bytes after last record", self.pos, self.path)
