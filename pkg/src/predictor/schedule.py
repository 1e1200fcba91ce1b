from __future__ import annotations

from dataclasses import dataclass

from src.errors import ConfigError


@dataclass(frozen=True)
class AnnealSchedule:
    """KL weight: flat at ``beta_start`` through warmup, then a linear ramp to ``beta_end``."""

    beta_start: float = 2e-6
    beta_end: float = 0.2
    warmup_epochs: int = 10
    ramp_steps: int = 50_000

    def __post_init__(self) -> None:
        if self.beta_end < self.beta_start or self.beta_start < 0:
            raise ConfigError(f"bad KL anneal range {self.beta_start} -> {self.beta_end} (expected 0 <= start <= end)")
        if self.warmup_epochs < 0 or self.ramp_steps < 0:
            raise ConfigError(f"bad KL anneal lengths warmup={self.warmup_epochs} ramp={self.ramp_steps}")

    def warmup_steps(self, steps_per_epoch: int) -> int:
        return self.warmup_epochs * steps_per_epoch

    def beta(self, step: int, steps_per_epoch: int) -> float:
        into = step - self.warmup_steps(steps_per_epoch)
        if into <= 0:
            return self.beta_start
        if self.ramp_steps == 0 or into >= self.ramp_steps:
            return self.beta_end
        return self.beta_start + (self.beta_end - self.beta_start) * into / self.ramp_steps
