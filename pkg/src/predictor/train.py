"""Encoding the dataset into latent codes and ELBO training of the predictor."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from src.autograd.checkpoint import load_checkpoint, save_checkpoint
from src.autograd.optim import AdamW, clip_grad_norm
from src.autograd.tensor import Tape, no_grad
from src.common import write_rows
from src.config import ExperimentConfig
from src.errors import ContractError, TrainingError
from src.ogm.dataset import CodeSequence, SequenceSample
from src.predictor.conditioning import Conditioning
from src.predictor.model import PredictorConfig, VariationalPredictor, elbo_loss
from src.predictor.schedule import AnnealSchedule
from src.representation.model import VaeGan, encode_grids

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "beta", "recon", "kl", "total")


def settings_from_config(cfg: ExperimentConfig) -> PredictorConfig:
    return PredictorConfig.from_preset(
        cfg.pred_preset,
        code_shape=cfg.code_shape,
        patches=cfg.pred_patches,
        stochastic=cfg.pred_stochastic,
        use_map=cfg.pred_use_map,
        use_traj=cfg.pred_use_traj,
        use_location=cfg.pred_use_location,
        use_aug=cfg.pred_use_aug,
        grid_size=cfg.grid_size,
        t_obs=cfg.t_obs,
        t_fut=cfg.t_fut,
    )


def schedule_from_config(cfg: ExperimentConfig) -> AnnealSchedule:
    return AnnealSchedule(cfg.beta_start, cfg.beta_end, cfg.warmup_epochs, cfg.ramp_steps)


@dataclass(frozen=True)
class TrainSettings:
    steps: int = 2000
    batch: int = 4
    lr: float = 4e-4
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    cond_drop: float = 0.0

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> TrainSettings:
        return cls(cfg.pred_steps, cfg.pred_batch, cfg.pred_lr, cfg.pred_weight_decay, cfg.pred_grad_clip, cfg.pred_cond_drop)


@dataclass
class PredictorRun:
    model: VariationalPredictor
    losses: list[dict[str, object]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([float(row[name]) for row in self.losses])  # type: ignore[arg-type]


def encode_dataset(model: VaeGan, samples: list[SequenceSample], batch: int = 16) -> list[CodeSequence]:
    """Posterior means of every frame under a frozen representation model."""
    out = []
    for sample in samples:
        codes = encode_grids(model, sample.grids, batch)
        out.append(CodeSequence(codes, sample.maps, sample.trajectory, sample.location, sample.aug, sample.t_obs, sample.t_fut))
    return out


def make_batch(sequences: list[CodeSequence], frames: int) -> tuple[np.ndarray, Conditioning]:
    """First ``frames`` frames of each sequence as (N, frames, c, h, w) codes plus conditioning."""
    short = [s for s in sequences if s.codes.shape[0] < frames]
    if short:
        raise ContractError(f"{len(short)} code sequences hold fewer than {frames} frames")
    codes = np.stack([s.codes[:frames] for s in sequences])
    return codes, Conditioning.from_sequences(sequences).window(0, frames)


def train_predictor(
    sequences: list[CodeSequence],
    pcfg: PredictorConfig,
    schedule: AnnealSchedule,
    settings: TrainSettings,
    seed: int = 0,
    progress: bool = False,
    log_every: int = 50,
) -> PredictorRun:
    """AdamW on the ELBO with the annealed KL weight; batches drawn with replacement."""
    if not sequences:
        raise ContractError("predictor training needs at least one code sequence")
    init_rng = np.random.default_rng(np.random.SeedSequence([seed, 2, 0]))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2, 1]))
    model = VariationalPredictor(pcfg, init_rng)
    params = list(model.named_parameters())
    opt = AdamW(params, lr=settings.lr, weight_decay=settings.weight_decay)
    frames = pcfg.t_obs + pcfg.t_fut
    batch = min(settings.batch, len(sequences))
    steps_per_epoch = math.ceil(len(sequences) / batch)
    run = PredictorRun(model)

    bar = tqdm(range(1, settings.steps + 1), disable=not progress, desc="train-predictor")
    for step in bar:
        idx = rng.integers(len(sequences), size=batch)
        codes, cond = make_batch([sequences[i] for i in idx], frames)
        beta = schedule.beta(step, steps_per_epoch) if pcfg.stochastic else 0.0
        opt.zero_grad()
        with Tape() as tape:
            loss = elbo_loss(model, codes, cond, beta, rng, settings.cond_drop)
        total = loss.total.item()
        if not math.isfinite(total):
            raise TrainingError("non-finite predictor loss", step=step)
        tape.backward(loss.total)
        for name, p in params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError("non-finite gradient", step=step, param=name)
        if settings.grad_clip > 0:
            clip_grad_norm(model.parameters(), settings.grad_clip)
        opt.step()

        run.losses.append({"step": step, "beta": beta, "recon": loss.recon, "kl": loss.kl, "total": total})
        bar.set_postfix(recon=f"{loss.recon:.4f}", kl=f"{loss.kl:.3f}")
        if step % log_every == 0 or step == settings.steps:
            logger.info("predictor step %d beta=%.3g recon=%.5f kl=%.4f", step, beta, loss.recon, loss.kl)
    return run


def evaluation_loss(model: VariationalPredictor, sequences: list[CodeSequence], seed: int = 0) -> tuple[float, float]:
    """Mean (recon, kl) of the posterior-driven ELBO over ``sequences``."""
    rng = np.random.default_rng(seed)
    codes, cond = make_batch(sequences, model.cfg.t_obs + model.cfg.t_fut)
    with no_grad():
        loss = elbo_loss(model, codes, cond, 0.0, rng)
    return loss.recon, loss.kl


def write_losses(path: str | Path, run: PredictorRun) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rows(out, [{k: row[k] for k in LOSS_COLUMNS} for row in run.losses])
    return out


def save_predictor(path: str | Path, model: VariationalPredictor) -> Path:
    return save_checkpoint(path, model.state_dict())


def load_predictor(path: str | Path, pcfg: PredictorConfig) -> VariationalPredictor:
    model = VariationalPredictor(pcfg, np.random.default_rng(0))
    model.load_state_dict(load_checkpoint(path))
    return model
