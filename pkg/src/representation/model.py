"""Convolutional encoder/decoder pair and the two-scale patch discriminator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.autograd import ops
from src.autograd.nn import Conv2d, ConvTranspose2d, Module
from src.autograd.tensor import Tensor, no_grad
from src.errors import ConfigError, DimensionError

# Half-open output clamp used by the GAN losses.
D_EPS = 1e-6


@dataclass(frozen=True)
class VaeGanConfig:
    grid_size: int = 128
    latent_channels: int = 8
    latent_size: int = 4
    width: int = 16
    max_width: int = 64
    beta: float = 1e-3
    adv_weight: float = 0.05
    r1_weight: float = 10.0
    lr: float = 4e-4
    batch: int = 8
    steps: int = 2000
    mode: str = "vaegan"

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ConfigError(f"bad beta {self.beta} (expected >= 0)")

    @property
    def n_down(self) -> int:
        ratio = self.grid_size // self.latent_size
        if ratio * self.latent_size != self.grid_size or ratio & (ratio - 1):
            raise ConfigError(f"grid_size {self.grid_size} is not latent_size {self.latent_size} times a power of two")
        return int(math.log2(ratio))

    @property
    def widths(self) -> list[int]:
        return [min(self.width * 2**k, self.max_width) for k in range(self.n_down)]

    @property
    def code_shape(self) -> tuple[int, int, int]:
        return self.latent_channels, self.latent_size, self.latent_size

    @property
    def uses_kl(self) -> bool:
        return self.mode != "ae"

    @property
    def uses_gan(self) -> bool:
        return self.mode == "vaegan"


@dataclass
class GaussianPosterior:
    mu: Tensor
    log_var: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var.data)


class Encoder(Module):
    def __init__(self, cfg: VaeGanConfig, rng: np.random.Generator) -> None:
        chans = [1, *cfg.widths]
        self.convs = [Conv2d(chans[k], chans[k + 1], 4, rng, stride=2, padding=1) for k in range(cfg.n_down)]
        self.mu_head = Conv2d(chans[-1], cfg.latent_channels, 3, rng, padding=1)
        self.log_var_head = Conv2d(chans[-1], cfg.latent_channels, 3, rng, padding=1, init_scale=0.1)

    def forward(self, x: Tensor) -> GaussianPosterior:
        h = x
        for conv in self.convs:
            h = ops.gelu(conv(h))
        return GaussianPosterior(self.mu_head(h), self.log_var_head(h))


class Decoder(Module):
    def __init__(self, cfg: VaeGanConfig, rng: np.random.Generator) -> None:
        widths = cfg.widths[::-1]
        self.stem = Conv2d(cfg.latent_channels, widths[0], 3, rng, padding=1)
        outs = [*widths[1:], 1]
        self.ups = [ConvTranspose2d(widths[k], outs[k], 4, rng, stride=2, padding=1) for k in range(cfg.n_down)]

    def forward(self, z: Tensor) -> Tensor:
        h = ops.gelu(self.stem(z))
        for k, up in enumerate(self.ups):
            h = up(h)
            if k < len(self.ups) - 1:
                h = ops.gelu(h)
        return ops.sigmoid(h)


class Discriminator(Module):
    """Patch classifier shared across the full and half input scale."""

    def __init__(self, cfg: VaeGanConfig, rng: np.random.Generator) -> None:
        w = max(cfg.width // 2, 4)
        self.conv1 = Conv2d(1, w, 4, rng, stride=2, padding=1)
        self.conv2 = Conv2d(w, 2 * w, 4, rng, stride=2, padding=1)
        self.out = Conv2d(2 * w, 1, 3, rng, padding=1)

    def _logits(self, x: Tensor) -> Tensor:
        h = ops.gelu(self.conv1(x))
        h = ops.gelu(self.conv2(h))
        return self.out(h)

    def logits(self, x: Tensor) -> list[Tensor]:
        """Patch logits at full and half resolution."""
        return [self._logits(x), self._logits(ops.avg_pool2d(x, 2))]

    def forward(self, x: Tensor) -> list[Tensor]:
        return [ops.clamp(ops.sigmoid(lg), D_EPS, 1.0 - D_EPS) for lg in self.logits(x)]

    def score(self, x: Tensor) -> Tensor:
        """Sum over samples of the scale-averaged mean patch logit."""
        per_scale = [ops.reshape(lg, (lg.shape[0], -1)).mean(axis=1) for lg in self.logits(x)]
        return ops.sum(per_scale[0] + per_scale[1]) * 0.5


class VaeGan(Module):
    def __init__(self, cfg: VaeGanConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.discriminator = Discriminator(cfg, rng)

    def generator_parameters(self) -> list[tuple[str, Tensor]]:
        return [*self.encoder.named_parameters("encoder."), *self.decoder.named_parameters("decoder.")]


def _as_batch(x: Tensor, shape: tuple[int, ...], what: str) -> Tensor:
    if x.shape[-len(shape) :] != shape or x.ndim not in (len(shape), len(shape) + 1):
        raise DimensionError(f"{what}: got {x.shape}, expected (N, {', '.join(map(str, shape))})")
    return x if x.ndim == len(shape) + 1 else ops.reshape(x, (1, *x.shape))


def encode(model: VaeGan, x: Tensor) -> GaussianPosterior:
    """``x`` is (1, H, W) or (N, 1, H, W); returns (N, c, h, w) parameters."""
    size = model.cfg.grid_size
    return model.encoder(_as_batch(x, (1, size, size), "encode"))


def reparameterize(posterior: GaussianPosterior, noise: np.ndarray) -> Tensor:
    if noise.shape != posterior.mu.shape:
        raise DimensionError(f"noise {noise.shape} does not match posterior {posterior.mu.shape}")
    sigma = ops.exp(posterior.log_var * 0.5)
    return posterior.mu + sigma * Tensor(noise)


def sample_posterior(posterior: GaussianPosterior, rng: np.random.Generator) -> Tensor:
    """``mu + exp(log_var / 2) * eps`` with ``eps`` drawn from ``rng``."""
    return reparameterize(posterior, rng.standard_normal(posterior.mu.shape))


def decode(model: VaeGan, z: Tensor) -> Tensor:
    """``z`` is (c, h, w) or (N, c, h, w); returns (N, 1, H, W) in (0, 1)."""
    return model.decoder(_as_batch(z, model.cfg.code_shape, "decode"))


def encode_grids(model: VaeGan, grids: np.ndarray, batch: int = 16) -> np.ndarray:
    """Posterior means of (T, H, W) grids as (T, c, h, w)."""
    out = []
    with no_grad():
        for start in range(0, len(grids), batch):
            chunk = Tensor(grids[start : start + batch, None])
            out.append(encode(model, chunk).mu.data)
    return np.concatenate(out) if out else np.zeros((0, *model.cfg.code_shape))


def decode_codes(model: VaeGan, codes: np.ndarray, batch: int = 16) -> np.ndarray:
    """(T, c, h, w) codes to (T, H, W) grids."""
    out = []
    with no_grad():
        for start in range(0, len(codes), batch):
            out.append(decode(model, Tensor(codes[start : start + batch])).data[:, 0])
    size = model.cfg.grid_size
    return np.concatenate(out) if out else np.zeros((0, size, size))
