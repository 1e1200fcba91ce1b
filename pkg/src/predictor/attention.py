"""Pre-layer-norm transformer stacks that run one time-step group at a time.

Queries of a group attend to the keys of every earlier group and of the group
itself, so all tokens of one step see each other and nothing later. Each group
is projected on its own, which keeps earlier outputs bit-identical however
many groups follow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from src.autograd import ops
from src.autograd.nn import LayerNorm, Linear, Module
from src.autograd.tensor import Tensor
from src.errors import DimensionError


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, length, inner = x.shape
    return ops.transpose(ops.reshape(x, (n, length, heads, inner // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    n, heads, length, dh = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (n, length, heads * dh))


def attend(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention over (N, heads, L, dh) operands."""
    scores = ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(q.shape[-1]))
    return ops.matmul(ops.softmax(scores, axis=-1), v)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, heads: int, rng: np.random.Generator, d_kv: int | None = None) -> None:
        dh = max(d_model // heads, 1)
        inner = heads * dh
        self.heads = heads
        self.query = Linear(d_model, inner, rng)
        self.key = Linear(d_kv or d_model, inner, rng)
        self.value = Linear(d_kv or d_model, inner, rng)
        self.proj = Linear(inner, d_model, rng)

    def keys_values(self, source: Tensor) -> tuple[Tensor, Tensor]:
        return _split_heads(self.key(source), self.heads), _split_heads(self.value(source), self.heads)

    def forward(self, x: Tensor, keys: Tensor, values: Tensor) -> Tensor:
        q = _split_heads(self.query(x), self.heads)
        return self.proj(_merge_heads(attend(q, keys, values)))


@dataclass
class StackCache:
    """Per-layer keys and values of the groups processed so far."""

    keys: list[list[Tensor]] = field(default_factory=list)
    values: list[list[Tensor]] = field(default_factory=list)
    groups: int = 0


class TransformerLayer(Module):
    def __init__(self, d_model: int, heads: int, d_ff: int, rng: np.random.Generator, cross_dim: int | None = None) -> None:
        self.norm_attn = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads, rng)
        if cross_dim is not None:
            self.norm_cross = LayerNorm(d_model)
            self.cross = MultiHeadAttention(d_model, heads, rng, d_kv=cross_dim)
        self.norm_ff = LayerNorm(d_model)
        self.ff_in = Linear(d_model, d_ff, rng)
        self.ff_out = Linear(d_ff, d_model, rng)

    @property
    def has_cross(self) -> bool:
        return hasattr(self, "cross")

    def forward(self, x: Tensor, past_keys: list[Tensor], past_values: list[Tensor], s: Tensor | None = None) -> Tensor:
        """Updates ``past_keys``/``past_values`` in place with this group's entries."""
        h = self.norm_attn(x)
        k, v = self.attn.keys_values(h)
        past_keys.append(k)
        past_values.append(v)
        x = x + self.attn(h, ops.concat(past_keys, axis=2), ops.concat(past_values, axis=2))
        if self.has_cross:
            if s is None:
                raise DimensionError("cross-attention layer needs a latent token")
            sk, sv = self.cross.keys_values(s)
            x = x + self.cross(self.norm_cross(x), sk, sv)
        return x + self.ff_out(ops.gelu(self.ff_in(self.norm_ff(x))))


class CausalStack(Module):
    def __init__(
        self,
        layers: int,
        d_model: int,
        heads: int,
        d_ff: int,
        rng: np.random.Generator,
        cross_dim: int | None = None,
    ) -> None:
        self.d_model = d_model
        self.layers = [TransformerLayer(d_model, heads, d_ff, rng, cross_dim) for _ in range(layers)]
        self.norm_out = LayerNorm(d_model)

    def new_cache(self) -> StackCache:
        return StackCache([[] for _ in self.layers], [[] for _ in self.layers])

    def forward(self, group: Tensor, cache: StackCache, s: Tensor | None = None) -> Tensor:
        """Process one (N, n, d_model) group after everything already in ``cache``."""
        if group.ndim != 3 or group.shape[-1] != self.d_model:
            raise DimensionError(f"stack input {group.shape} (expected (N, n, {self.d_model}))")
        x = group
        for layer, keys, values in zip(self.layers, cache.keys, cache.values, strict=True):
            x = layer(x, keys, values, s)
        cache.groups += 1
        return self.norm_out(x)

    def run(self, groups: list[Tensor], latents: list[Tensor | None] | None = None) -> list[Tensor]:
        """Outputs for every group of a whole sequence."""
        cache = self.new_cache()
        latents = latents or [None] * len(groups)
        return [self(g, cache, s) for g, s in zip(groups, latents, strict=True)]
