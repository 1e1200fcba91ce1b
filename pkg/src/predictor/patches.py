"""Latent codes as token sequences.

A ``c x h x w`` code is cut into ``k = r * r`` spatial blocks of
``(h / r) x (w / r)`` cells, taken row-major; each block is flattened
channel-major into one token of ``c * h * w / k`` values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.autograd import ops
from src.autograd.tensor import Tensor
from src.errors import ContractError, DimensionError


@dataclass(frozen=True)
class PatchSpec:
    k: int
    channels: int
    height: int
    width: int

    def __post_init__(self) -> None:
        r = math.isqrt(self.k) if self.k > 0 else 0
        if r * r != self.k or self.height % r or self.width % r:
            raise ContractError(
                f"bad patch count {self.k} for a {self.height}x{self.width} code (expected a square whose root divides both)"
            )

    @property
    def side(self) -> int:
        return math.isqrt(self.k)

    @property
    def code_shape(self) -> tuple[int, int, int]:
        return self.channels, self.height, self.width

    @property
    def token_dim(self) -> int:
        return self.channels * self.height * self.width // self.k


def patchify(z: Tensor, spec: PatchSpec) -> Tensor:
    """(c, h, w) or (N, c, h, w) to (N, k, token_dim)."""
    if z.shape[-3:] != spec.code_shape or z.ndim not in (3, 4):
        raise DimensionError(f"patchify: code {z.shape} does not match {spec.code_shape}")
    n = 1 if z.ndim == 3 else z.shape[0]
    r = spec.side
    c, h, w = spec.code_shape
    blocks = ops.reshape(z, (n, c, r, h // r, r, w // r))
    blocks = ops.transpose(blocks, (0, 2, 4, 1, 3, 5))
    return ops.reshape(blocks, (n, spec.k, spec.token_dim))


def unpatchify(tokens: Tensor, spec: PatchSpec) -> Tensor:
    """(N, k, token_dim) back to (N, c, h, w)."""
    if tokens.ndim != 3 or tokens.shape[1:] != (spec.k, spec.token_dim):
        raise DimensionError(f"unpatchify: tokens {tokens.shape} do not match (N, {spec.k}, {spec.token_dim})")
    n = tokens.shape[0]
    r = spec.side
    c, h, w = spec.code_shape
    blocks = ops.reshape(tokens, (n, r, r, c, h // r, w // r))
    blocks = ops.transpose(blocks, (0, 3, 1, 4, 2, 5))
    return ops.reshape(blocks, (n, c, h, w))


def positional_encoding(t: int, dim: int) -> np.ndarray:
    """``PE[2i] = sin(t / 10000^(2i/dim))``, ``PE[2i+1] = cos(...)``."""
    return positional_table(t + 1, dim)[t]


def positional_table(n: int, dim: int) -> np.ndarray:
    if dim % 2:
        raise ContractError(f"positional encoding needs an even dim, got {dim}")
    t = np.arange(n, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.empty((n, dim))
    table[:, 0::2] = np.sin(t / freq)
    table[:, 1::2] = np.cos(t / freq)
    return table
