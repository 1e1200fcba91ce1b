"""Ancestral sampling of refined windows over a predicted horizon."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from src.autograd.tensor import Tensor, no_grad
from src.diffusion.schedule import NoiseSchedule, from_signed, to_signed
from src.diffusion.unet import DenoiseUNet
from src.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class RefineResult:
    grids: np.ndarray
    clamp_rate: float


def sample_windows(
    model: DenoiseUNet,
    schedule: NoiseSchedule,
    decoded: np.ndarray,
    anchors: np.ndarray,
    rng: np.random.Generator,
) -> RefineResult:
    """Denoise from pure noise for (N, frames, H, W) decoded windows and (N, H, W) anchors."""
    cond = Tensor(to_signed(decoded))
    anchor = Tensor(to_signed(anchors))
    x = rng.standard_normal(decoded.shape)
    with no_grad():
        for t in reversed(range(schedule.steps)):
            eps = model(Tensor(x), np.full(len(x), t), cond, anchor).data
            coef = schedule.betas[t] / math.sqrt(1.0 - schedule.alpha_bars[t])
            x = (x - coef * eps) / math.sqrt(schedule.alphas[t])
            if t > 0:
                x = x + math.sqrt(schedule.posterior_variance(t)) * rng.standard_normal(x.shape)
    p = from_signed(x)
    clamped = float(np.mean((p < 0.0) | (p > 1.0)))
    return RefineResult(np.clip(p, 0.0, 1.0), clamped)


def refine(
    model: DenoiseUNet,
    schedule: NoiseSchedule,
    predicted: np.ndarray,
    first_anchor: np.ndarray,
    rng: np.random.Generator,
) -> RefineResult:
    """Refine (T, H, W) or (S, T, H, W) decoded predictions window by window.

    The first window is anchored on the last rasterized observation, later ones
    on the decoded prediction just before them. A final partial window is
    padded by repeating its last frame and the padding is dropped afterwards.
    Windows of every sample are denoised together.
    """
    frames = model.cfg.frames
    batched = predicted.ndim == 4
    preds = predicted if batched else predicted[None]
    n_samples, horizon = preds.shape[:2]
    extent = preds.shape[2:]
    if horizon < 1:
        raise ContractError("refine needs at least one predicted frame")
    if first_anchor.shape != extent:
        raise DimensionError(f"anchor {first_anchor.shape} does not match predictions {predicted.shape}")
    n_windows = math.ceil(horizon / frames)
    pad = n_windows * frames - horizon
    if pad:
        preds_padded = np.concatenate([preds, np.repeat(preds[:, -1:], pad, axis=1)], axis=1)
    else:
        preds_padded = preds
    windows = preds_padded.reshape(n_samples * n_windows, frames, *extent)
    anchors = np.stack(
        [first_anchor if k == 0 else preds[s, k * frames - 1] for s in range(n_samples) for k in range(n_windows)]
    )
    result = sample_windows(model, schedule, windows, anchors, rng)
    grids = result.grids.reshape(n_samples, n_windows * frames, *extent)[:, :horizon]
    logger.debug("refined %d x %d frames in %d windows, clamp rate %.4f", n_samples, horizon, len(windows), result.clamp_rate)
    return RefineResult(grids if batched else grids[0], result.clamp_rate)
