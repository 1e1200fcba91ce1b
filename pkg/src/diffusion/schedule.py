"""Linear-beta DDPM noise schedule, respaced to a short sampling chain."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.errors import ContractError, DimensionError

BASE_STEPS = 1000
BETA_START = 1e-4
BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """``alpha_bars[t]`` is the signal fraction after step ``t`` (0-based)."""

    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    @property
    def steps(self) -> int:
        return len(self.betas)

    @classmethod
    def linear(
        cls,
        steps: int = 100,
        base_steps: int = BASE_STEPS,
        beta_start: float = BETA_START,
        beta_end: float = BETA_END,
    ) -> NoiseSchedule:
        """Betas of a ``base_steps`` chain spaced linearly in [beta_start, beta_end], kept at ``steps`` evenly spaced points."""
        if not 1 <= steps <= base_steps:
            raise ContractError(f"bad diffusion step count {steps} (expected 1..{base_steps})")
        base = np.cumprod(1.0 - np.linspace(beta_start, beta_end, base_steps))
        keep = np.round(np.linspace(0, base_steps - 1, steps)).astype(int)
        alpha_bars = base[keep]
        prev = np.concatenate([[1.0], alpha_bars[:-1]])
        alphas = alpha_bars / prev
        return cls(betas=1.0 - alphas, alphas=alphas, alpha_bars=alpha_bars)

    def check_step(self, t: int | np.ndarray) -> None:
        arr = np.asarray(t)
        if arr.size and (arr.min() < 0 or arr.max() >= self.steps):
            raise ContractError(f"diffusion step {t} out of range [0, {self.steps})")

    def posterior_variance(self, t: int) -> float:
        """Variance of ``x_{t-1}`` given ``x_t`` and ``x_0``; zero at the first step."""
        if t == 0:
            return 0.0
        return float(self.betas[t] * (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t]))


def forward_diffuse(
    schedule: NoiseSchedule,
    x0: np.ndarray,
    t: int | np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``; an array ``t`` holds one step per leading item."""
    schedule.check_step(t)
    eps = rng.standard_normal(x0.shape)
    abar = schedule.alpha_bars[np.asarray(t)]
    if abar.ndim:
        if abar.shape != x0.shape[:1]:
            raise DimensionError(f"step array {abar.shape} does not match batch of {x0.shape}")
        abar = abar.reshape(-1, *([1] * (x0.ndim - 1)))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps, eps


def to_signed(p: np.ndarray) -> np.ndarray:
    return 2.0 * p - 1.0


def from_signed(x: np.ndarray) -> np.ndarray:
    return (x + 1.0) * 0.5
