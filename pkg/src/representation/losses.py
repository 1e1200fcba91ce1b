from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.autograd import ops
from src.autograd.tensor import Tape, Tensor
from src.errors import DimensionError
from src.representation.model import Discriminator, GaussianPosterior

# Relative weight of the /2 and /4 reconstruction terms.
COARSE_WEIGHT = 0.5


@dataclass
class VaeLoss:
    total: Tensor
    recon: float
    kl: float


def multiscale_recon(x: Tensor, x_hat: Tensor) -> Tensor:
    """Pixel MSE plus half-weighted MSE after 2x and 4x average pooling."""
    if x.shape != x_hat.shape:
        raise DimensionError(f"reconstruction {x_hat.shape} does not match input {x.shape}")
    loss = ops.mse(x_hat, x)
    for k in (2, 4):
        loss = loss + ops.mse(ops.avg_pool2d(x_hat, k), ops.avg_pool2d(x, k)) * COARSE_WEIGHT
    return loss


def kl_standard_normal(posterior: GaussianPosterior) -> Tensor:
    """Closed-form KL(N(mu, sigma^2) || N(0, I)), averaged over latent elements."""
    mu, lv = posterior.mu, posterior.log_var
    per_elem = (ops.square(mu) + ops.exp(lv) - lv - 1.0) * 0.5
    return ops.mean(per_elem)


def vae_loss(x: Tensor, x_hat: Tensor, posterior: GaussianPosterior, beta: float) -> VaeLoss:
    recon = multiscale_recon(x, x_hat)
    kl = kl_standard_normal(posterior)
    total = recon + kl * beta if beta else recon
    return VaeLoss(total, recon.item(), kl.item())


def _bce_terms(probs: list[Tensor], target_real: bool) -> Tensor:
    terms = [ops.mean(ops.log(p if target_real else 1.0 - p)) for p in probs]
    return -(terms[0] + terms[1]) * 0.5


def discriminator_loss(disc: Discriminator, real: Tensor, fake: Tensor) -> Tensor:
    """-[log D(real) + log(1 - D(fake))], averaged over patches, batch and scales."""
    if real.shape != fake.shape:
        raise DimensionError(f"real batch {real.shape} and fake batch {fake.shape} differ")
    return _bce_terms(disc(real), True) + _bce_terms(disc(fake), False)


def generator_loss(disc: Discriminator, fake: Tensor) -> Tensor:
    """Non-saturating ``-log D(fake)``."""
    return _bce_terms(disc(fake), True)


def gan_losses(real: Tensor, fake: Tensor, disc: Discriminator) -> tuple[Tensor, Tensor]:
    return discriminator_loss(disc, real, fake.detach()), generator_loss(disc, fake)


def _param_grads(disc: Discriminator, x: np.ndarray) -> dict[str, np.ndarray]:
    disc.zero_grad()
    with Tape() as tape:
        score = disc.score(Tensor(x))
    tape.backward(score)
    return {name: p.grad.copy() for name, p in disc.named_parameters() if p.grad is not None}


def r1_penalty(disc: Discriminator, real: np.ndarray, weight: float) -> tuple[float, dict[str, np.ndarray]]:
    """Value and parameter gradient of ``weight / 2 * E ||grad_x score(real)||^2``.

    The parameter gradient is a Hessian-vector product: the directional
    derivative of the score's parameter gradient along ``v = grad_x score``,
    taken by central differences so only first-order tapes are needed.
    Leaves the discriminator gradients cleared.
    """
    n = real.shape[0]
    x = Tensor(real, requires_grad=True)
    disc.zero_grad()
    with Tape() as tape:
        score = disc.score(x)
    tape.backward(score)
    v = x.grad if x.grad is not None else np.zeros_like(real)
    value = 0.5 * weight * float(np.sum(v * v)) / n

    rms = float(np.sqrt(np.mean(v * v)))
    grads: dict[str, np.ndarray] = {}
    if weight > 0 and rms > 0:
        h = 1e-4 / rms
        plus = _param_grads(disc, real + h * v)
        minus = _param_grads(disc, real - h * v)
        grads = {name: weight / n * (plus[name] - minus[name]) / (2.0 * h) for name in plus}
    disc.zero_grad()
    return value, grads
