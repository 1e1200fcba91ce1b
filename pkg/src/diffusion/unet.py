"""Small (2+1)D U-Net predicting the noise of a window of frames.

Every frame is convolved spatially on its own; residual blocks then mix
neighbouring frames with a kernel-3 convolution along time. The decoded frames
and the anchor frame enter as extra input channels of every frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.autograd import ops
from src.autograd.nn import Conv2d, ConvTranspose2d, Linear, Module, Parameter, uniform_init
from src.autograd.tensor import Tensor
from src.errors import ConfigError, DimensionError
from src.predictor.patches import positional_encoding

IN_CHANNELS = 3


@dataclass(frozen=True)
class RefinerConfig:
    grid_size: int = 128
    frames: int = 4
    width: int = 16
    steps: int = 100
    lr: float = 2e-4
    batch: int = 4
    train_steps: int = 1000

    def __post_init__(self) -> None:
        if self.grid_size % 2 or self.frames < 1 or self.width < 2 or self.width % 2:
            raise ConfigError(f"bad refiner sizes grid={self.grid_size} frames={self.frames} width={self.width}")


class TemporalConv(Module):
    """Kernel-3 convolution along time, shared over pixels."""

    def __init__(self, channels: int, rng: np.random.Generator) -> None:
        fan_in = channels * 3
        self.weight = Parameter(uniform_init(rng, (channels, channels, 3, 1), fan_in))
        self.bias = Parameter(uniform_init(rng, (channels,), fan_in))

    def forward(self, h: Tensor, frames: int) -> Tensor:
        nf, c, height, width = h.shape
        n = nf // frames
        x = ops.transpose(ops.reshape(h, (n, frames, c, height * width)), (0, 2, 1, 3))
        x = ops.conv2d(x, self.weight, self.bias, padding=(1, 0))
        return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (nf, c, height, width))


class ResBlock(Module):
    def __init__(self, channels: int, emb_dim: int, rng: np.random.Generator) -> None:
        self.conv1 = Conv2d(channels, channels, 3, rng, padding=1)
        self.emb = Linear(emb_dim, channels, rng)
        self.temporal = TemporalConv(channels, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng, padding=1)

    def forward(self, h: Tensor, emb: Tensor, frames: int) -> Tensor:
        nf, c, height, width = h.shape
        shift = ops.reshape(self.emb(emb), (nf, c, 1, 1))
        x = ops.gelu(self.conv1(h) + ops.expand(shift, h.shape))
        x = ops.gelu(self.temporal(x, frames))
        return h + self.conv2(x)


class DenoiseUNet(Module):
    def __init__(self, cfg: RefinerConfig, rng: np.random.Generator) -> None:
        w = cfg.width
        self.cfg = cfg
        self.time_in = Linear(w, w, rng)
        self.time_out = Linear(w, w, rng)
        self.stem = Conv2d(IN_CHANNELS, w, 3, rng, padding=1)
        self.block_hi = ResBlock(w, w, rng)
        self.down = Conv2d(w, 2 * w, 4, rng, stride=2, padding=1)
        self.block_lo = ResBlock(2 * w, w, rng)
        self.up = ConvTranspose2d(2 * w, w, 4, rng, stride=2, padding=1)
        self.merge = Conv2d(2 * w, w, 3, rng, padding=1)
        self.block_out = ResBlock(w, w, rng)
        self.out = Conv2d(w, 1, 3, rng, padding=1, init_scale=1e-2)

    def time_embedding(self, t: np.ndarray, frames: int) -> Tensor:
        """(N * frames, width) embedding of per-window steps ``t``."""
        table = np.stack([positional_encoding(int(step), self.cfg.width) for step in t])
        emb = self.time_out(ops.gelu(self.time_in(Tensor(table))))
        n, w = emb.shape
        return ops.reshape(ops.expand(ops.reshape(emb, (n, 1, w)), (n, frames, w)), (n * frames, w))

    def forward(self, x_t: Tensor, t: np.ndarray, decoded: Tensor, anchor: Tensor) -> Tensor:
        """``x_t`` and ``decoded`` are (N, frames, H, W), ``anchor`` (N, H, W); returns (N, frames, H, W)."""
        n, frames, height, width = x_t.shape
        if decoded.shape != x_t.shape or anchor.shape != (n, height, width):
            raise DimensionError(f"refiner inputs {x_t.shape}, {decoded.shape}, {anchor.shape} do not agree")
        if frames != self.cfg.frames or height % 2 or width % 2:
            raise DimensionError(f"refiner window {x_t.shape} (expected {self.cfg.frames} frames of even extent)")
        t = np.broadcast_to(np.asarray(t), (n,))
        anchors = ops.expand(ops.reshape(anchor, (n, 1, height, width)), (n, frames, height, width))
        x = ops.stack([x_t, decoded, anchors], axis=2)
        x = ops.reshape(x, (n * frames, IN_CHANNELS, height, width))
        emb = self.time_embedding(t, frames)

        hi = self.block_hi(self.stem(x), emb, frames)
        lo = self.block_lo(self.down(ops.gelu(hi)), emb, frames)
        up = self.up(ops.gelu(lo))
        h = self.block_out(self.merge(ops.concat([up, hi], axis=1)), emb, frames)
        return ops.reshape(self.out(ops.gelu(h)), (n, frames, height, width))
