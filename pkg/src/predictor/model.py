"""Variational transformer over latent-code tokens.

The token sequence is a list of step groups. Group 0 holds the learned start
token and the conditioning prefix; group ``f + 1`` holds the ``k`` patch tokens
of code frame ``f`` and the planned-trajectory token of frame ``f + 1``. The
prediction network reads group ``f + 1`` together with the latent ``s`` of the
step it predicts and emits frame ``f + 1`` as a residual on frame ``f``.

The prior for step ``t`` reads groups through frame ``t - 1``; the posterior
reads groups through frame ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
from functools import lru_cache

import numpy as np

from src.autograd import ops
from src.autograd.nn import Linear, Module, Parameter, uniform_init
from src.autograd.tensor import Tensor
from src.errors import ConfigError, ContractError, DimensionError
from src.predictor.attention import CausalStack, StackCache
from src.predictor.conditioning import Conditioning, ConditioningBundle, ConditioningEncoder
from src.predictor.patches import PatchSpec, patchify, positional_table, unpatchify
from src.representation.model import GaussianPosterior, reparameterize

PREDICTOR_PRESETS: dict[str, dict[str, int]] = {
    "tiny": {"layers": 1, "inference_layers": 1, "heads": 1, "width": 16, "ff": 32},
    "desk": {"layers": 2, "inference_layers": 2, "heads": 2, "width": 64, "ff": 128},
    "large": {"layers": 6, "inference_layers": 6, "heads": 6, "width": 256, "ff": 1024},
    "compact": {"layers": 1, "inference_layers": 2, "heads": 2, "width": 256, "ff": 128},
}


class LatentSource(StrEnum):
    PRIOR = "prior"
    POSTERIOR = "posterior"


class RolloutMode(StrEnum):
    PRIOR_SAMPLE = "prior_sample"
    POSTERIOR_TEACHER = "posterior_teacher"


@dataclass(frozen=True)
class PredictorConfig:
    code_shape: tuple[int, int, int] = (8, 4, 4)
    patches: int = 4
    layers: int = 2
    inference_layers: int = 2
    heads: int = 2
    width: int = 64
    ff: int = 128
    stochastic: bool = True
    use_map: bool = True
    use_traj: bool = True
    use_location: bool = True
    use_aug: bool = True
    grid_size: int = 128
    t_obs: int = 5
    t_fut: int = 15

    def __post_init__(self) -> None:
        if self.width % 2 or self.width < self.heads:
            raise ConfigError(f"bad predictor width {self.width} (expected even and >= heads {self.heads})")
        if min(self.layers, self.inference_layers, self.heads, self.t_obs, self.t_fut) < 1:
            raise ConfigError(f"bad predictor sizes in {self}")

    @classmethod
    def from_preset(cls, name: str, **overrides: object) -> PredictorConfig:
        if name not in PREDICTOR_PRESETS:
            raise ConfigError(f"bad predictor preset '{name}' (expected one of {', '.join(PREDICTOR_PRESETS)})")
        return cls(**{**PREDICTOR_PRESETS[name], **overrides})  # type: ignore[arg-type]

    @property
    def patch(self) -> PatchSpec:
        return PatchSpec(self.patches, *self.code_shape)


@dataclass
class StochasticLatent:
    value: Tensor
    source: LatentSource
    step: int


@dataclass
class RolloutResult:
    """``codes`` is (N, n_steps, c, h, w); ``kl`` holds one per-dim tensor per step in posterior_teacher mode."""

    codes: Tensor
    latents: list[StochasticLatent] = field(default_factory=list)
    kl: list[Tensor] = field(default_factory=list)


@dataclass
class ElboLoss:
    total: Tensor
    recon: float
    kl: float


@lru_cache(maxsize=8)
def _positions(dim: int, n: int = 128) -> np.ndarray:
    return positional_table(n, dim)


def _position(slot: int, dim: int) -> np.ndarray:
    table = _positions(dim)
    return table[slot] if slot < len(table) else positional_table(slot + 1, dim)[slot]


def _add_position(x: Tensor, slot: int) -> Tensor:
    return x + Tensor(np.broadcast_to(_position(slot, x.shape[-1]), x.shape).copy())


class StepEmbedding(Module):
    """Code tokens of one frame, plus the trajectory token of the next frame."""

    def __init__(self, patch: PatchSpec, width: int, rng: np.random.Generator) -> None:
        self.patch = patch
        self.embed = Linear(patch.token_dim, width, rng)
        self.patch_embed = Parameter(uniform_init(rng, (1, patch.k, width), width))

    def forward(self, code: Tensor, frame: int, bundle: ConditioningBundle) -> Tensor:
        tokens = self.embed(patchify(code, self.patch))
        tokens = tokens + ops.expand(self.patch_embed, tokens.shape)
        traj = bundle.traj_token(frame + 1)
        group = tokens if traj is None else ops.concat([tokens, traj], axis=1)
        return _add_position(group, frame + 1)


class InferenceNet(Module):
    """Causal encoder whose pooled group output parameterizes a diagonal Gaussian."""

    def __init__(self, cfg: PredictorConfig, rng: np.random.Generator) -> None:
        dim = cfg.patch.token_dim
        self.step_embed = StepEmbedding(cfg.patch, cfg.width, rng)
        self.stack = CausalStack(cfg.inference_layers, cfg.width, cfg.heads, cfg.ff, rng)
        self.mu_head = Linear(cfg.width, dim, rng)
        self.log_var_head = Linear(cfg.width, dim, rng, init_scale=0.1)

    def _gaussian(self, out: Tensor) -> GaussianPosterior:
        pooled = ops.reduce_mean(out, axis=1)
        return GaussianPosterior(self.mu_head(pooled), self.log_var_head(pooled))

    def start(self, prefix: Tensor, cache: StackCache) -> GaussianPosterior:
        return self._gaussian(self.stack(prefix, cache))

    def forward(self, code: Tensor, frame: int, bundle: ConditioningBundle, cache: StackCache) -> GaussianPosterior:
        """Distribution read after the group of ``frame``."""
        return self._gaussian(self.stack(self.step_embed(code, frame, bundle), cache))


class VariationalPredictor(Module):
    def __init__(self, cfg: PredictorConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.patch = cfg.patch
        self.conditioning = ConditioningEncoder(
            cfg.grid_size, self.patch, cfg.width, rng, cfg.use_map, cfg.use_traj, cfg.use_location, cfg.use_aug
        )
        self.step_embed = StepEmbedding(self.patch, cfg.width, rng)
        self.decoder = CausalStack(cfg.layers, cfg.width, cfg.heads, cfg.ff, rng, cross_dim=self.patch.token_dim)
        self.head = Linear(cfg.width, self.patch.token_dim, rng, init_scale=0.1)
        if cfg.stochastic:
            self.prior = InferenceNet(cfg, rng)
            self.posterior = InferenceNet(cfg, rng)

    @property
    def latent_dim(self) -> int:
        return self.patch.token_dim

    def zero_latent(self, n: int) -> Tensor:
        return Tensor(np.zeros((n, 1, self.latent_dim)))

    def encode_conditioning(self, cond: Conditioning, t_obs: int) -> ConditioningBundle:
        return self.conditioning(cond, t_obs)

    def prefix(self, bundle: ConditioningBundle, n: int) -> Tensor:
        tokens = [self.conditioning.start_token(n), *bundle.prefix_tokens()]
        return _add_position(ops.concat(tokens, axis=1), 0)

    def advance(self, code: Tensor, frame: int, bundle: ConditioningBundle, cache: StackCache, s: Tensor) -> Tensor:
        """Feed frame ``frame`` and return the prediction of frame ``frame + 1``."""
        out = self.decoder(self.step_embed(code, frame, bundle), cache, s)
        delta = unpatchify(self.head(ops.slice_axis(out, 1, 0, self.patch.k)), self.patch)
        return code + delta


def _check_codes(model: VariationalPredictor, codes: Tensor, what: str) -> None:
    if codes.ndim != 5 or codes.shape[2:] != model.cfg.code_shape:
        raise DimensionError(f"{what}: codes {codes.shape} (expected (N, T, {', '.join(map(str, model.cfg.code_shape))}))")


def _frame(codes: Tensor, f: int) -> Tensor:
    n, _, c, h, w = codes.shape
    return ops.reshape(ops.slice_axis(codes, 1, f, f + 1), (n, c, h, w))


def _as_latent(value: Tensor | np.ndarray, model: VariationalPredictor, n: int) -> Tensor:
    t = value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))
    if t.size != n * model.latent_dim:
        raise DimensionError(f"latent {t.shape} (expected ({n}, {model.latent_dim}))")
    return ops.reshape(t, (n, 1, model.latent_dim))


def _latent_cache(model: VariationalPredictor, bundle: ConditioningBundle, prefix: Tensor, history: Tensor, upto: int) -> StackCache:
    """Decoder cache after the prefix and frames ``0 .. upto - 1`` with zero latents."""
    n = history.shape[0]
    cache = model.decoder.new_cache()
    zero = model.zero_latent(n)
    model.decoder(prefix, cache, zero)
    for f in range(upto):
        model.advance(_frame(history, f), f, bundle, cache, zero)
    return cache


def predict_step(model: VariationalPredictor, history: Tensor | np.ndarray, s: Tensor | np.ndarray, cond: Conditioning) -> Tensor:
    """Next code after an (N, T, c, h, w) history given the step latent ``s``."""
    history = history if isinstance(history, Tensor) else Tensor(np.asarray(history, dtype=np.float64))
    _check_codes(model, history, "predict_step")
    n, t = history.shape[:2]
    if t < 1:
        raise ContractError("predict_step needs at least one observed code")
    bundle = model.encode_conditioning(cond, t)
    cache = _latent_cache(model, bundle, model.prefix(bundle, n), history, t - 1)
    return model.advance(_frame(history, t - 1), t - 1, bundle, cache, _as_latent(s, model, n))


def inference_net(
    model: VariationalPredictor,
    source: LatentSource,
    codes: Tensor | np.ndarray,
    cond: Conditioning,
    step: int,
) -> GaussianPosterior:
    """Distribution of ``s`` for ``step``; the posterior sees frame ``step``, the prior stops before it."""
    if not model.cfg.stochastic:
        raise ContractError("deterministic predictor has no inference networks")
    codes = codes if isinstance(codes, Tensor) else Tensor(np.asarray(codes, dtype=np.float64))
    _check_codes(model, codes, "inference_net")
    visible = step + 1 if source is LatentSource.POSTERIOR else step
    if not 0 <= visible <= codes.shape[1]:
        raise ContractError(f"step {step} needs {visible} frames, codes hold {codes.shape[1]}")
    net = model.posterior if source is LatentSource.POSTERIOR else model.prior
    n = codes.shape[0]
    bundle = model.encode_conditioning(cond, model.cfg.t_obs)
    cache = net.stack.new_cache()
    dist = net.start(model.prefix(bundle, n), cache)
    for f in range(visible):
        dist = net(_frame(codes, f), f, bundle, cache)
    return dist


def gaussian_kl(q: GaussianPosterior, p: GaussianPosterior) -> Tensor:
    """Per-dimension ``KL(q || p)`` between diagonal Gaussians."""
    if q.mu.shape != p.mu.shape:
        raise DimensionError(f"kl: shapes {q.mu.shape} and {p.mu.shape} differ")
    var_ratio = ops.exp(q.log_var - p.log_var)
    mean_term = ops.square(q.mu - p.mu) * ops.exp(ops.neg(p.log_var))
    return (p.log_var - q.log_var + var_ratio + mean_term - 1.0) * 0.5


def rollout(
    model: VariationalPredictor,
    observed: Tensor | np.ndarray,
    cond: Conditioning,
    n_steps: int,
    rng: np.random.Generator,
    mode: RolloutMode | str = RolloutMode.PRIOR_SAMPLE,
    targets: Tensor | np.ndarray | None = None,
    bundle: ConditioningBundle | None = None,
) -> RolloutResult:
    """Autoregressive prediction of ``n_steps`` codes after ``observed``.

    In posterior_teacher mode ``targets`` holds the ground-truth codes of every frame
    (observed and future); ``s`` comes from the posterior while the decoder
    and the prior keep consuming predictions.
    """
    mode = RolloutMode(mode)
    observed = observed if isinstance(observed, Tensor) else Tensor(np.asarray(observed, dtype=np.float64))
    _check_codes(model, observed, "rollout")
    n, t_obs = observed.shape[:2]
    if n_steps < 1:
        raise ContractError(f"rollout needs n_steps >= 1, got {n_steps}")
    if cond.frames < t_obs + n_steps:
        raise ContractError(f"conditioning covers {cond.frames} frames, rollout needs {t_obs + n_steps}")
    if bundle is None:
        bundle = model.encode_conditioning(cond, t_obs)
    prefix = model.prefix(bundle, n)
    cache = _latent_cache(model, bundle, prefix, observed, t_obs - 1)
    stochastic = model.cfg.stochastic

    posteriors: list[GaussianPosterior] = []
    if stochastic:
        prior_cache = model.prior.stack.new_cache()
        prior_dist = model.prior.start(prefix, prior_cache)
        for f in range(t_obs - 1):
            prior_dist = model.prior(_frame(observed, f), f, bundle, prior_cache)
        if mode is RolloutMode.POSTERIOR_TEACHER:
            if targets is None:
                raise ContractError("posterior_teacher rollout needs target codes")
            targets = targets if isinstance(targets, Tensor) else Tensor(np.asarray(targets, dtype=np.float64))
            _check_codes(model, targets, "rollout targets")
            if targets.shape[1] < t_obs + n_steps:
                raise ContractError(f"targets hold {targets.shape[1]} frames, rollout needs {t_obs + n_steps}")
            post_cache = model.posterior.stack.new_cache()
            model.posterior.start(prefix, post_cache)
            posteriors = [model.posterior(_frame(targets, f), f, bundle, post_cache) for f in range(t_obs + n_steps)]

    latents: list[StochasticLatent] = []
    kls: list[Tensor] = []
    current = _frame(observed, t_obs - 1)
    predicted: list[Tensor] = []
    for j in range(n_steps):
        frame = t_obs - 1 + j
        if stochastic:
            prior_dist = model.prior(current, frame, bundle, prior_cache)
            noise = rng.standard_normal(prior_dist.mu.shape)
            if mode is RolloutMode.POSTERIOR_TEACHER:
                post = posteriors[frame + 1]
                s = reparameterize(post, noise)
                kls.append(gaussian_kl(post, prior_dist))
                source = LatentSource.POSTERIOR
            else:
                s = reparameterize(prior_dist, noise)
                source = LatentSource.PRIOR
            latents.append(StochasticLatent(s, source, frame + 1))
            latent = ops.reshape(s, (n, 1, model.latent_dim))
        else:
            latent = model.zero_latent(n)
        current = model.advance(current, frame, bundle, cache, latent)
        predicted.append(current)
    return RolloutResult(ops.stack(predicted, axis=1), latents, kls)


def elbo_loss(
    model: VariationalPredictor,
    codes: Tensor | np.ndarray,
    cond: Conditioning,
    beta: float,
    rng: np.random.Generator,
    drop_prob: float = 0.0,
) -> ElboLoss:
    """Summed per-step code MSE plus ``beta`` times the summed per-step mean KL.

    ``codes`` holds ``t_obs + t_fut`` ground-truth frames per sequence.
    """
    codes = codes if isinstance(codes, Tensor) else Tensor(np.asarray(codes, dtype=np.float64))
    _check_codes(model, codes, "elbo_loss")
    t_obs = model.cfg.t_obs
    n_steps = codes.shape[1] - t_obs
    if n_steps < 1:
        raise ContractError(f"elbo_loss needs more than t_obs={t_obs} frames, got {codes.shape[1]}")
    bundle = model.encode_conditioning(cond, t_obs).dropped(rng, drop_prob)
    result = rollout(
        model,
        ops.slice_axis(codes, 1, 0, t_obs),
        cond,
        n_steps,
        rng,
        RolloutMode.POSTERIOR_TEACHER,
        targets=codes,
        bundle=bundle,
    )
    recon_terms = [ops.mse(_frame(result.codes, j), _frame(codes, t_obs + j)) for j in range(n_steps)]
    recon = recon_terms[0]
    for term in recon_terms[1:]:
        recon = recon + term
    if not result.kl:
        return ElboLoss(recon, recon.item(), 0.0)
    kl = ops.reduce_mean(result.kl[0])
    for term in result.kl[1:]:
        kl = kl + ops.reduce_mean(term)
    return ElboLoss(recon + kl * beta, recon.item(), kl.item())


def extrapolate(
    model: VariationalPredictor,
    observed: Tensor | np.ndarray,
    cond: Conditioning,
    horizon: int,
    rng: np.random.Generator,
    window: int | None = None,
) -> Tensor:
    """Sliding-window rollout to ``horizon`` codes; (N, horizon, c, h, w).

    Each window predicts up to ``window`` steps (``t_fut`` by default) and the
    last ``t_obs`` codes seen so far become the next window's observations.
    ``cond`` spans ``t_obs + horizon`` frames with poses in the ego frame of frame 0.
    """
    observed = observed if isinstance(observed, Tensor) else Tensor(np.asarray(observed, dtype=np.float64))
    _check_codes(model, observed, "extrapolate")
    t_obs = observed.shape[1]
    window = window or model.cfg.t_fut
    if horizon < 1:
        raise ContractError(f"extrapolate needs horizon >= 1, got {horizon}")
    if cond.frames < t_obs + horizon:
        raise ContractError(f"conditioning covers {cond.frames} frames, horizon {horizon} needs {t_obs + horizon}")
    frames = [_frame(observed, f) for f in range(t_obs)]
    start = 0
    while len(frames) - t_obs < horizon:
        n = min(window, horizon - (len(frames) - t_obs))
        obs = ops.stack(frames[start : start + t_obs], axis=1)
        result = rollout(model, obs, cond.window(start, t_obs + n), n, rng)
        frames.extend(_frame(result.codes, j) for j in range(n))
        start += n
    return ops.stack(frames[t_obs:], axis=1)
