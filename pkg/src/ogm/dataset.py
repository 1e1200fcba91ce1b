"""Sequence samples and their binary containers.

``LOGMDATA`` (grids)::

    magic  u32 version  u32 H  u32 W  f64 resolution  u32 count
    count x ( u32 t_obs  u32 t_fut  u8 location  u8 aug  u8 has_alt
              f32[T,H,W] grids  u8[T,3,H,W] maps  f64[T,3] trajectory
              [f32[T,H,W] alt_grids] )

``LOGMCODE`` (latent codes) uses the same header with ``c, h, w`` in place of
the grid extents and stores ``f64[T,c,h,w]`` codes instead of grids.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from src.common import ByteReader
from src.errors import ContractError, DimensionError, FormatError
from src.ogm.grid import GridSpec
from src.scene.world import ARCHETYPES

logger = logging.getLogger(__name__)

DATA_MAGIC = b"LOGMDATA"
CODE_MAGIC = b"LOGMCODE"
VERSION = 1

AUGMENTATIONS = ("identity", "mirror_lr", "rotate_90", "rotate_180", "rotate_270", "time_reverse")


def one_hot(index: int, size: int) -> np.ndarray:
    out = np.zeros(size)
    out[index] = 1.0
    return out


@dataclass(eq=False)
class SequenceSample:
    grids: np.ndarray = field(repr=False)
    maps: np.ndarray = field(repr=False)
    trajectory: np.ndarray = field(repr=False)
    location: int
    aug: int
    t_obs: int
    t_fut: int
    alt_grids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        total = self.t_obs + self.t_fut
        if self.grids.shape[0] != total:
            raise ContractError(f"{self.grids.shape[0]} grids for t_obs={self.t_obs} + t_fut={self.t_fut}")
        if self.maps.shape[0] != total or self.trajectory.shape != (total, 3):
            raise DimensionError(f"maps {self.maps.shape} / trajectory {self.trajectory.shape} do not cover {total} frames")
        if self.alt_grids is not None and self.alt_grids.shape != self.grids.shape:
            raise DimensionError(f"alt_grids {self.alt_grids.shape} != grids {self.grids.shape}")

    @property
    def total(self) -> int:
        return self.t_obs + self.t_fut

    @property
    def location_onehot(self) -> np.ndarray:
        return one_hot(self.location, len(ARCHETYPES))

    @property
    def aug_onehot(self) -> np.ndarray:
        return one_hot(self.aug, len(AUGMENTATIONS))

    def truncated(self, t_fut: int) -> SequenceSample:
        """Same sample keeping only the first ``t_fut`` future frames."""
        n = self.t_obs + t_fut
        alt = None if self.alt_grids is None else self.alt_grids[:n]
        return replace(
            self,
            grids=self.grids[:n],
            maps=self.maps[:n],
            trajectory=self.trajectory[:n],
            t_fut=t_fut,
            alt_grids=alt,
        )


@dataclass(eq=False)
class CodeSequence:
    codes: np.ndarray = field(repr=False)
    maps: np.ndarray = field(repr=False)
    trajectory: np.ndarray = field(repr=False)
    location: int
    aug: int
    t_obs: int
    t_fut: int


def _header(magic: bytes, dims: tuple[int, int, int | float], count: int, third_float: bool) -> bytes:
    a, b, c = dims
    tail = struct.pack("<d", float(c)) if third_float else struct.pack("<I", int(c))
    return magic + struct.pack("<III", VERSION, a, b) + tail + struct.pack("<I", count)


def _read_header(reader: ByteReader, magic: bytes, third_float: bool) -> tuple[int, int, float | int, int]:
    if reader.take(len(magic), "magic") != magic:
        raise FormatError(f"bad magic (expected {magic.decode()})", 0, reader.path)
    version, a, b = reader.unpack("<III", "header")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", len(magic), reader.path)
    (c,) = reader.unpack("<d" if third_float else "<I", "header")
    (count,) = reader.unpack("<I", "sample count")
    return a, b, c, count


def write_dataset(path: str | Path, samples: list[SequenceSample], spec: GridSpec) -> Path:
    """Grids are stored as float32; quantize them first for a bit-exact round trip."""
    parts = [_header(DATA_MAGIC, (spec.height, spec.width, spec.resolution), len(samples), third_float=True)]
    for n, s in enumerate(samples):
        if s.grids.shape[1:] != spec.shape or s.maps.shape[1:] != (3, *spec.shape):
            raise DimensionError(f"sample {n}: grids {s.grids.shape} do not match spec {spec.shape}")
        parts.append(struct.pack("<IIBBB", s.t_obs, s.t_fut, s.location, s.aug, s.alt_grids is not None))
        parts.append(np.ascontiguousarray(s.grids, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(s.maps, dtype=np.uint8).tobytes())
        parts.append(np.ascontiguousarray(s.trajectory, dtype="<f8").tobytes())
        if s.alt_grids is not None:
            parts.append(np.ascontiguousarray(s.alt_grids, dtype="<f4").tobytes())
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(b"".join(parts))
    logger.info("wrote %d samples to %s", len(samples), out)
    return out


def decode_dataset(data: bytes, path: str | None = None) -> tuple[GridSpec, list[SequenceSample]]:
    reader = ByteReader(data, path)
    height, width, resolution, count = _read_header(reader, DATA_MAGIC, third_float=True)
    spec = GridSpec(height, width, float(resolution))
    samples: list[SequenceSample] = []
    for n in range(count):
        t_obs, t_fut, location, aug, has_alt = reader.unpack("<IIBBB", f"sample {n} header")
        total = t_obs + t_fut
        grids = reader.array("<f4", (total, height, width), f"sample {n} grids").astype(np.float64)
        maps = reader.array("u1", (total, 3, height, width), f"sample {n} maps").copy()
        traj = reader.array("<f8", (total, 3), f"sample {n} trajectory").astype(np.float64)
        alt = None
        if has_alt:
            alt = reader.array("<f4", (total, height, width), f"sample {n} alt grids").astype(np.float64)
        samples.append(SequenceSample(grids, maps, traj, location, aug, t_obs, t_fut, alt))
    reader.expect_end()
    return spec, samples


def read_dataset(path: str | Path) -> tuple[GridSpec, list[SequenceSample]]:
    src = Path(path)
    return decode_dataset(src.read_bytes(), str(src))


def write_codes(path: str | Path, sequences: list[CodeSequence], code_shape: tuple[int, int, int]) -> Path:
    parts = [_header(CODE_MAGIC, code_shape, len(sequences), third_float=False)]
    for n, s in enumerate(sequences):
        if s.codes.shape[1:] != code_shape:
            raise DimensionError(f"sequence {n}: codes {s.codes.shape} do not match {code_shape}")
        map_h, map_w = s.maps.shape[-2:]
        parts.append(struct.pack("<IIBBII", s.t_obs, s.t_fut, s.location, s.aug, map_h, map_w))
        parts.append(np.ascontiguousarray(s.codes, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(s.maps, dtype=np.uint8).tobytes())
        parts.append(np.ascontiguousarray(s.trajectory, dtype="<f8").tobytes())
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(b"".join(parts))
    logger.info("wrote %d code sequences to %s", len(sequences), out)
    return out


def read_codes(path: str | Path) -> tuple[tuple[int, int, int], list[CodeSequence]]:
    src = Path(path)
    reader = ByteReader(src.read_bytes(), str(src))
    c, h, w, count = _read_header(reader, CODE_MAGIC, third_float=False)
    shape = (int(c), int(h), int(w))
    out: list[CodeSequence] = []
    for n in range(count):
        t_obs, t_fut, location, aug, map_h, map_w = reader.unpack("<IIBBII", f"sequence {n} header")
        total = t_obs + t_fut
        codes = reader.array("<f8", (total, *shape), f"sequence {n} codes").astype(np.float64)
        maps = reader.array("u1", (total, 3, map_h, map_w), f"sequence {n} maps").copy()
        traj = reader.array("<f8", (total, 3), f"sequence {n} trajectory").astype(np.float64)
        out.append(CodeSequence(codes, maps, traj, location, aug, t_obs, t_fut))
    reader.expect_end()
    return shape, out
