"""Noise-prediction training on windows of decoded ground-truth frames."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from src.autograd import ops
from src.autograd.checkpoint import load_checkpoint, save_checkpoint
from src.autograd.optim import AdamW
from src.autograd.tensor import Tape, Tensor, no_grad
from src.common import write_rows
from src.config import ExperimentConfig
from src.diffusion.schedule import NoiseSchedule, forward_diffuse, to_signed
from src.diffusion.unet import DenoiseUNet, RefinerConfig
from src.errors import ContractError, DimensionError, TrainingError
from src.ogm.dataset import SequenceSample
from src.representation.model import VaeGan, decode_codes, encode_grids

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "loss")


def settings_from_config(cfg: ExperimentConfig) -> RefinerConfig:
    return RefinerConfig(
        grid_size=cfg.grid_size,
        frames=cfg.diff_window,
        width=cfg.diff_width,
        steps=cfg.diff_steps,
        lr=cfg.diff_lr,
        batch=cfg.diff_batch,
        train_steps=cfg.diff_train_steps,
    )


@dataclass(eq=False)
class RefinerWindow:
    """``frames`` decoded grids, the rasterized grid before them, and the rasterized targets."""

    frames: np.ndarray
    anchor: np.ndarray
    target: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.anchor.shape != self.frames.shape[1:]:
            raise DimensionError(f"anchor {self.anchor.shape} does not match frames {self.frames.shape}")
        if self.target is not None and self.target.shape != self.frames.shape:
            raise DimensionError(f"target {self.target.shape} does not match frames {self.frames.shape}")


@dataclass
class RefinerRun:
    model: DenoiseUNet
    losses: list[dict[str, object]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([float(row[name]) for row in self.losses])  # type: ignore[arg-type]


def windows_from_sequence(grids: np.ndarray, decoded: np.ndarray, frames: int) -> list[RefinerWindow]:
    """Every window with a preceding frame to anchor on."""
    return [
        RefinerWindow(decoded[s : s + frames], grids[s - 1], grids[s : s + frames])
        for s in range(1, len(grids) - frames + 1)
    ]


def build_windows(vae: VaeGan, samples: list[SequenceSample], frames: int) -> list[RefinerWindow]:
    """Training windows from each sample's grids and their single-frame reconstructions."""
    out: list[RefinerWindow] = []
    for sample in samples:
        decoded = decode_codes(vae, encode_grids(vae, sample.grids))
        out.extend(windows_from_sequence(sample.grids, decoded, frames))
    return out


def _stack(windows: list[RefinerWindow]) -> tuple[Tensor, Tensor, np.ndarray]:
    decoded = Tensor(to_signed(np.stack([w.frames for w in windows])))
    anchor = Tensor(to_signed(np.stack([w.anchor for w in windows])))
    target = to_signed(np.stack([w.target for w in windows]))  # type: ignore[misc]
    return decoded, anchor, target


def denoising_loss(
    model: DenoiseUNet,
    schedule: NoiseSchedule,
    windows: list[RefinerWindow],
    rng: np.random.Generator,
) -> Tensor:
    """MSE between predicted and true noise at uniformly drawn steps."""
    decoded, anchor, x0 = _stack(windows)
    t = rng.integers(schedule.steps, size=len(windows))
    x_t, eps = forward_diffuse(schedule, x0, t, rng)
    return ops.mse(model(Tensor(x_t), t, decoded, anchor), Tensor(eps))


def train_refiner(
    windows: list[RefinerWindow],
    rcfg: RefinerConfig,
    seed: int = 0,
    progress: bool = False,
    log_every: int = 50,
) -> RefinerRun:
    if not windows:
        raise ContractError("refiner training needs at least one window")
    if any(w.target is None for w in windows):
        raise ContractError("refiner training windows need targets")
    init_rng = np.random.default_rng(np.random.SeedSequence([seed, 3, 0]))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3, 1]))
    model = DenoiseUNet(rcfg, init_rng)
    schedule = NoiseSchedule.linear(rcfg.steps)
    opt = AdamW(model.named_parameters(), lr=rcfg.lr)
    run = RefinerRun(model)

    bar = tqdm(range(1, rcfg.train_steps + 1), disable=not progress, desc="train-refiner")
    for step in bar:
        idx = rng.integers(len(windows), size=min(rcfg.batch, len(windows)))
        opt.zero_grad()
        with Tape() as tape:
            loss = denoising_loss(model, schedule, [windows[i] for i in idx], rng)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError("non-finite refiner loss", step=step)
        tape.backward(loss)
        opt.step()
        run.losses.append({"step": step, "loss": value})
        bar.set_postfix(loss=f"{value:.4f}")
        if step % log_every == 0 or step == rcfg.train_steps:
            logger.info("refiner step %d loss=%.5f", step, value)
    return run


def held_out_loss(model: DenoiseUNet, windows: list[RefinerWindow], seed: int = 0) -> float:
    schedule = NoiseSchedule.linear(model.cfg.steps)
    with no_grad():
        return denoising_loss(model, schedule, windows, np.random.default_rng(seed)).item()


def write_losses(path: str | Path, run: RefinerRun) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rows(out, [{k: row[k] for k in LOSS_COLUMNS} for row in run.losses])
    return out


def save_refiner(path: str | Path, model: DenoiseUNet) -> Path:
    return save_checkpoint(path, model.state_dict())


def load_refiner(path: str | Path, rcfg: RefinerConfig) -> DenoiseUNet:
    model = DenoiseUNet(rcfg, np.random.default_rng(0))
    model.load_state_dict(load_checkpoint(path))
    return model
