"""Alternating discriminator / encoder-decoder training of the latent model."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tqdm import tqdm

from src.autograd.checkpoint import load_checkpoint, save_checkpoint
from src.autograd.optim import AdamW
from src.autograd.tensor import Tape, Tensor, backward, no_grad
from src.common import write_rows
from src.config import ExperimentConfig
from src.errors import ContractError, TrainingError
from src.representation.losses import discriminator_loss, generator_loss, r1_penalty, vae_loss
from src.representation.model import VaeGan, VaeGanConfig, decode, encode, reparameterize

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "recon", "kl", "loss_D", "loss_G", "r1")


def settings_from_config(cfg: ExperimentConfig) -> VaeGanConfig:
    return VaeGanConfig(
        grid_size=cfg.grid_size,
        latent_channels=cfg.latent_channels,
        latent_size=cfg.latent_size,
        width=cfg.vae_width,
        max_width=cfg.vae_max_width,
        beta=0.0 if cfg.vae_mode == "ae" else cfg.vae_beta,
        adv_weight=cfg.vae_adv_weight,
        r1_weight=cfg.vae_r1,
        lr=cfg.vae_lr,
        batch=cfg.vae_batch,
        steps=cfg.vae_steps,
        mode=cfg.vae_mode,
    )


@dataclass
class RepresentationRun:
    model: VaeGan
    losses: list[dict[str, object]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([float(row[name]) for row in self.losses])  # type: ignore[arg-type]


def _check_finite(value: float, step: int, what: str) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {what}", step=step)


def train_representation(
    grids: np.ndarray,
    vcfg: VaeGanConfig,
    seed: int = 0,
    progress: bool = False,
    log_every: int = 50,
) -> RepresentationRun:
    """Train on a pool of (N, H, W) grids; batches are drawn with replacement."""
    if len(grids) == 0:
        raise ContractError("representation training needs at least one grid")
    init_rng = np.random.default_rng(np.random.SeedSequence([seed, 1, 0]))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1, 1]))
    model = VaeGan(vcfg, init_rng)
    opt_g = AdamW(model.generator_parameters(), lr=vcfg.lr)
    opt_d = AdamW(model.discriminator.named_parameters("discriminator."), lr=vcfg.lr)
    run = RepresentationRun(model)

    bar = tqdm(range(1, vcfg.steps + 1), disable=not progress, desc="train-vae")
    for step in bar:
        idx = rng.integers(len(grids), size=min(vcfg.batch, len(grids)))
        x = Tensor(grids[idx, None])
        noise = rng.standard_normal((len(idx), *vcfg.code_shape))

        opt_g.zero_grad()
        with Tape() as tape_g:
            posterior = encode(model, x)
            z = reparameterize(posterior, noise) if vcfg.uses_kl else posterior.mu
            x_hat = decode(model, z)

        loss_d_value = loss_g_value = r1_value = 0.0
        if vcfg.uses_gan:
            r1_value, r1_grads = r1_penalty(model.discriminator, x.data, vcfg.r1_weight)
            opt_d.zero_grad()
            with Tape() as tape_d:
                loss_d = discriminator_loss(model.discriminator, x, x_hat.detach())
            tape_d.backward(loss_d)
            loss_d_value = loss_d.item()
            _check_finite(loss_d_value, step, "discriminator loss")
            for name, p in model.discriminator.named_parameters("discriminator."):
                extra = r1_grads.get(name.removeprefix("discriminator."))
                if extra is not None and p.grad is not None:
                    p.grad = p.grad + extra
            opt_d.step()

        with tape_g:
            parts = vae_loss(x, x_hat, posterior, vcfg.beta if vcfg.uses_kl else 0.0)
            total = parts.total
            if vcfg.uses_gan:
                loss_g = generator_loss(model.discriminator, x_hat)
                loss_g_value = loss_g.item()
                total = total + loss_g * vcfg.adv_weight
        _check_finite(total.item(), step, "representation loss")
        backward(total)
        opt_g.step()
        model.discriminator.zero_grad()

        row = {"step": step, "recon": parts.recon, "kl": parts.kl, "loss_D": loss_d_value, "loss_G": loss_g_value, "r1": r1_value}
        run.losses.append(row)
        bar.set_postfix(recon=f"{parts.recon:.4f}", kl=f"{parts.kl:.3f}")
        if step % log_every == 0 or step == vcfg.steps:
            logger.info("vae step %d recon=%.5f kl=%.4f loss_D=%.4f loss_G=%.4f", step, parts.recon, parts.kl, loss_d_value, loss_g_value)
    return run


def reconstruction_mse(model: VaeGan, grids: np.ndarray, batch: int = 16) -> float:
    """Mean pixel MSE of ``decode(encode(x).mu)`` over (N, H, W) grids."""
    total = 0.0
    with no_grad():
        for start in range(0, len(grids), batch):
            chunk = grids[start : start + batch]
            x_hat = decode(model, encode(model, Tensor(chunk[:, None])).mu).data[:, 0]
            total += float(np.sum((x_hat - chunk) ** 2))
    return total / grids.size


def write_losses(path: str | Path, run: RepresentationRun) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rows(out, [{k: row[k] for k in LOSS_COLUMNS} for row in run.losses])
    return out


def save_representation(path: str | Path, model: VaeGan) -> Path:
    return save_checkpoint(path, model.state_dict())


def load_representation(path: str | Path, vcfg: VaeGanConfig) -> VaeGan:
    model = VaeGan(vcfg, np.random.default_rng(0))
    model.load_state_dict(load_checkpoint(path))
    return model

