"""Flat ``key = value`` experiment configuration.

Every key is a field of :class:`ExperimentConfig`; the field default is the
documented default and ``metadata["doc"]`` is its one-line description. A file
may start with ``preset = <name>`` to pick a base before the other keys apply.
"""
from __future__ import annotations

import math
import re
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from src.errors import ConfigError
from src.ogm.grid import GridSpec
from src.scene.world import ARCHETYPES

RE_LINE = re.compile(r"^(?P<key>[a-z_][a-z0-9_]*)\s*=\s*(?P<value>.*?)$")
RE_COMMENT = re.compile(r"#.*")

VAE_MODES = ("ae", "vae", "vaegan")


def _key(default: Any, doc: str) -> Any:
    return field(default=default, metadata={"doc": doc})


@dataclass(frozen=True)
class ExperimentConfig:
    # run
    preset: str = _key("desk", "base preset applied before the other keys (smoke, desk, full)")
    seed: int = _key(0, "global seed; every stage derives its streams from it")
    run_dir: str = _key("runs/default", "directory holding data/, checkpoints/, logs/, grids/ and the CSV reports")
    progress: bool = _key(True, "show tqdm progress bars")
    workers: int = _key(1, "processes used for data generation")
    log_every: int = _key(50, "training steps between loss log lines")

    # data
    grid_size: int = _key(128, "grid height and width in cells")
    grid_resolution: float = _key(1.0 / 3.0, "cell edge length in meters")
    n_beams: int = _key(360, "LiDAR beams per scan")
    max_range: float = _key(30.0, "LiDAR max range in meters")
    archetypes: tuple[str, ...] = _key(tuple(a.value for a in ARCHETYPES), "scene archetypes mixed into the datasets")
    n_train: int = _key(256, "training sequences")
    n_test: int = _key(32, "held-out sequences")
    augment: bool = _key(True, "draw one augmentation per training sequence")
    t_obs: int = _key(5, "observed frames")
    t_fut: int = _key(15, "predicted frames per rollout window")
    horizon: int = _key(30, "extrapolation horizon in frames")

    # representation
    vae_mode: str = _key("vaegan", "latent model variant: ae, vae or vaegan")
    latent_channels: int = _key(8, "latent code channels c")
    latent_size: int = _key(4, "latent code height and width")
    vae_width: int = _key(16, "channels of the first encoder conv")
    vae_max_width: int = _key(64, "channel cap of the conv stacks")
    vae_lr: float = _key(4e-4, "AdamW learning rate of encoder, decoder and discriminator")
    vae_beta: float = _key(1e-3, "KL weight")
    vae_adv_weight: float = _key(0.05, "weight of the generator loss in the encoder/decoder update")
    vae_r1: float = _key(10.0, "R1 gradient penalty weight on real grids")
    vae_batch: int = _key(8, "grids per representation step")
    vae_steps: int = _key(2000, "representation training steps")

    # predictor
    pred_preset: str = _key("desk", "transformer size: tiny, desk, large or compact")
    pred_patches: int = _key(4, "tokens per latent code (perfect square)")
    pred_lr: float = _key(4e-4, "AdamW learning rate")
    pred_weight_decay: float = _key(0.01, "AdamW decoupled weight decay")
    pred_batch: int = _key(4, "sequences per predictor step")
    pred_steps: int = _key(2000, "predictor training steps")
    pred_stochastic: bool = _key(True, "learn prior and posterior; false trains the deterministic variant")
    pred_use_map: bool = _key(True, "condition on map rasters")
    pred_use_traj: bool = _key(True, "condition on the planned trajectory")
    pred_use_location: bool = _key(True, "condition on the one-hot location")
    pred_use_aug: bool = _key(True, "condition on the one-hot augmentation id")
    pred_cond_drop: float = _key(0.0, "probability of dropping each conditioning token during training")
    pred_grad_clip: float = _key(1.0, "gradient norm clip (0 disables)")
    beta_start: float = _key(2e-6, "KL weight during warmup")
    beta_end: float = _key(0.2, "KL weight after the ramp")
    warmup_epochs: int = _key(10, "epochs held at beta_start")
    ramp_steps: int = _key(50000, "steps of the linear ramp to beta_end")

    # refiner
    diff_enabled: bool = _key(True, "train and evaluate the diffusion refiner")
    diff_steps: int = _key(100, "diffusion steps")
    diff_window: int = _key(4, "frames per refinement window")
    diff_width: int = _key(16, "U-Net base channels")
    diff_lr: float = _key(2e-4, "AdamW learning rate")
    diff_batch: int = _key(4, "windows per refiner step")
    diff_train_steps: int = _key(1000, "refiner training steps")
    diff_eval_sequences: int = _key(8, "test sequences refined during eval (sampling is slow)")

    # evaluation
    n_samples: int = _key(10, "stochastic samples per sequence for best-of-N")
    t_occ: float = _key(0.65, "occupied threshold")
    t_free: float = _key(0.35, "free threshold")
    eval_sequences: int = _key(0, "test sequences evaluated (0 = all)")

    def __post_init__(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"bad preset '{self.preset}' (expected one of {sorted(PRESETS)})")
        if not 0.0 <= self.t_free < self.t_occ <= 1.0:
            raise ConfigError(f"bad thresholds t_occ={self.t_occ}, t_free={self.t_free} (expected 0 <= t_free < t_occ <= 1)")
        if self.vae_mode not in VAE_MODES:
            raise ConfigError(f"bad vae_mode '{self.vae_mode}' (expected one of {list(VAE_MODES)})")
        known = {a.value for a in ARCHETYPES}
        if not self.archetypes or not set(self.archetypes) <= known:
            raise ConfigError(f"bad archetypes {self.archetypes} (expected a subset of {sorted(known)})")
        if self.t_obs < 1 or self.t_fut < 1 or self.horizon < self.t_fut:
            raise ConfigError(f"bad horizon t_obs={self.t_obs} t_fut={self.t_fut} horizon={self.horizon}")
        ratio = self.grid_size // self.latent_size if self.latent_size > 0 else 0
        if ratio < 1 or ratio * self.latent_size != self.grid_size or ratio & (ratio - 1):
            raise ConfigError(f"grid_size {self.grid_size} must be latent_size {self.latent_size} times a power of two")
        root = math.isqrt(self.pred_patches)
        if root * root != self.pred_patches or self.latent_size % root:
            raise ConfigError(f"bad pred_patches {self.pred_patches} (expected a square whose root divides {self.latent_size})")

    @property
    def grid_spec(self) -> GridSpec:
        return GridSpec(self.grid_size, self.grid_size, self.grid_resolution)

    @property
    def code_shape(self) -> tuple[int, int, int]:
        return self.latent_channels, self.latent_size, self.latent_size


PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "smoke": {
        "progress": False,
        "log_every": 5,
        "grid_size": 32,
        "grid_resolution": 4.0 / 3.0,
        "n_beams": 180,
        "n_train": 6,
        "n_test": 3,
        "latent_channels": 4,
        "vae_width": 4,
        "vae_max_width": 8,
        "vae_batch": 2,
        "vae_steps": 6,
        "pred_preset": "tiny",
        "pred_batch": 2,
        "pred_steps": 6,
        "warmup_epochs": 1,
        "ramp_steps": 10,
        "diff_steps": 8,
        "diff_width": 4,
        "diff_batch": 2,
        "diff_train_steps": 4,
        "diff_eval_sequences": 2,
        "n_samples": 2,
    },
    "full": {
        "n_train": 4000,
        "n_test": 200,
        "latent_channels": 64,
        "vae_width": 32,
        "vae_max_width": 256,
        "vae_lr": 1e-4,
        "vae_steps": 100000,
        "pred_preset": "large",
        "pred_steps": 200000,
        "diff_width": 64,
        "diff_train_steps": 100000,
        "diff_eval_sequences": 200,
    },
}


def preset_config(name: str = "desk", **overrides: Any) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"bad preset '{name}' (expected one of {sorted(PRESETS)})")
    values = {**PRESETS[name], **overrides, "preset": name}
    unknown = sorted(set(values) - _FIELDS.keys())
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    return ExperimentConfig(**values)


def _default_of(name: str) -> Any:
    f = _FIELDS[name]
    return f.default if f.default is not MISSING else None


def parse_value(key: str, raw: str) -> Any:
    """Parse ``raw`` with the type of the field default."""
    default = _default_of(key)
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text not in ("true", "false"):
                raise ValueError(text)
            return text == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(item.strip() for item in text.split(",") if item.strip())
    except ValueError as exc:
        expected = "true/false" if isinstance(default, bool) else type(default).__name__
        raise ConfigError(f"bad value for {key} '{raw}' (expected {expected})") from exc
    return text


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    pairs: dict[str, Any] = {}
    order: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = RE_COMMENT.sub("", line).strip()
        if not stripped:
            continue
        m = RE_LINE.match(stripped)
        if not m:
            raise ConfigError(f"bad config line {source}:{lineno} '{line}' (expected key = value)")
        key = m.group("key")
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {source}:{lineno} '{key}'")
        if key in pairs:
            raise ConfigError(f"duplicate config key {source}:{lineno} '{key}'")
        pairs[key] = parse_value(key, m.group("value"))
        order.append(key)
    if "preset" in pairs and order[0] != "preset":
        raise ConfigError(f"'preset' must be the first key in {source}")
    preset = pairs.pop("preset", "desk")
    return preset_config(preset, **pairs)


def load_config(path: str | Path) -> ExperimentConfig:
    src = Path(path)
    if not src.exists():
        raise ConfigError(f"config file '{src}' does not exist")
    return parse_config_text(src.read_text(encoding="utf-8"), str(src))


def config_text(cfg: ExperimentConfig) -> str:
    values = asdict(cfg)
    return "\n".join(f"{name} = {format_value(values[name])}" for name in _FIELDS) + "\n"


def dump_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(config_text(cfg), encoding="utf-8")
    return out


def describe_config() -> list[str]:
    """One ``key = default  # doc`` line per key, in file order."""
    return [f"{name} = {format_value(_default_of(name))}  # {f.metadata['doc']}" for name, f in _FIELDS.items()]


def with_overrides(cfg: ExperimentConfig, **changes: Any) -> ExperimentConfig:
    unknown = sorted(set(changes) - _FIELDS.keys())
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    return replace(cfg, **changes)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
