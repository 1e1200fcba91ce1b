"""Map, planned-trajectory, location and augmentation conditioning tokens."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from src.autograd import ops
from src.autograd.nn import Conv2d, Linear, Module, Parameter, uniform_init
from src.autograd.tensor import Tensor
from src.errors import ContractError, DimensionError
from src.ogm.augment import renormalize_trajectory
from src.ogm.dataset import AUGMENTATIONS, CodeSequence, one_hot
from src.predictor.patches import PatchSpec, patchify
from src.scene.world import ARCHETYPES

# Planned positions are fed in units of this many meters.
TRAJ_SCALE = 10.0
MAP_WIDTH = 8


@dataclass(eq=False)
class Conditioning:
    """Raw per-frame conditioning of a batch of sequences.

    ``maps`` is (N, F, 3, H, W), ``trajectory`` (N, F, 3) in the ego frame of
    frame 0, ``location`` (N, 3) and ``aug`` (N, 6) one-hot.
    """

    maps: np.ndarray
    trajectory: np.ndarray
    location: np.ndarray
    aug: np.ndarray

    def __post_init__(self) -> None:
        n, frames = self.trajectory.shape[:2]
        if self.maps.shape[:2] != (n, frames):
            raise DimensionError(f"maps {self.maps.shape} do not cover trajectory {self.trajectory.shape}")
        if self.location.shape != (n, len(ARCHETYPES)) or self.aug.shape != (n, len(AUGMENTATIONS)):
            raise DimensionError(f"one-hot ids {self.location.shape}, {self.aug.shape} for {n} sequences")

    @property
    def frames(self) -> int:
        return self.trajectory.shape[1]

    @property
    def batch(self) -> int:
        return self.trajectory.shape[0]

    def window(self, start: int, length: int) -> Conditioning:
        """Frames ``start .. start + length - 1`` with the trajectory re-anchored at ``start``.

        Frame 0 is already the origin, so a window starting there keeps the poses as stored.
        """
        if start < 0 or start + length > self.frames:
            raise ContractError(f"conditioning covers {self.frames} frames, window needs [{start}, {start + length})")
        if start == 0:
            traj = self.trajectory[:, :length]
        else:
            traj = np.stack([renormalize_trajectory(t, start)[start : start + length] for t in self.trajectory])
        return replace(self, maps=self.maps[:, start : start + length], trajectory=traj)

    @classmethod
    def from_sequences(cls, sequences: list[CodeSequence]) -> Conditioning:
        return cls(
            maps=np.stack([s.maps for s in sequences]),
            trajectory=np.stack([s.trajectory for s in sequences]),
            location=np.stack([one_hot(s.location, len(ARCHETYPES)) for s in sequences]),
            aug=np.stack([one_hot(s.aug, len(AUGMENTATIONS)) for s in sequences]),
        )


@dataclass
class ConditioningBundle:
    """Conditioning projected to the model width; absent families are ``None``."""

    map_tokens: Tensor | None
    traj_tokens: Tensor | None
    location_token: Tensor | None
    aug_token: Tensor | None

    def prefix_tokens(self) -> list[Tensor]:
        return [t for t in (self.location_token, self.aug_token, self.map_tokens) if t is not None]

    def traj_token(self, frame: int) -> Tensor | None:
        """Token of ``frame``, clipped to the last conditioned frame."""
        if self.traj_tokens is None:
            return None
        frame = min(frame, self.traj_tokens.shape[1] - 1)
        return ops.slice_axis(self.traj_tokens, 1, frame, frame + 1)

    def dropped(self, rng: np.random.Generator, drop_prob: float) -> ConditioningBundle:
        """Zero each token family per sequence with probability ``drop_prob``."""
        if drop_prob <= 0.0:
            return self

        def drop(t: Tensor | None) -> Tensor | None:
            if t is None:
                return None
            keep = (rng.random(t.shape[0]) >= drop_prob).astype(np.float64)
            return t * Tensor(np.broadcast_to(keep[:, None, None], t.shape))

        return ConditioningBundle(drop(self.map_tokens), drop(self.traj_tokens), drop(self.location_token), drop(self.aug_token))


class MapEncoder(Module):
    """Pool, then strided convs down to the latent extent, then one token per patch."""

    def __init__(self, grid_size: int, patch: PatchSpec, d_model: int, rng: np.random.Generator) -> None:
        ratio = grid_size // patch.height
        self.n_conv = min(2, int(math.log2(ratio)))
        self.pool = ratio // 2**self.n_conv
        chans = [3] + [MAP_WIDTH] * self.n_conv
        self.convs = [Conv2d(chans[i], chans[i + 1], 4, rng, stride=2, padding=1) for i in range(self.n_conv)]
        self.patch = PatchSpec(patch.k, chans[-1], patch.height, patch.width)
        self.proj = Linear(self.patch.token_dim, d_model, rng)

    def forward(self, maps: Tensor) -> Tensor:
        h = ops.avg_pool2d(maps, self.pool) if self.pool > 1 else maps
        for conv in self.convs:
            h = ops.gelu(conv(h))
        return self.proj(patchify(h, self.patch))


class ConditioningEncoder(Module):
    def __init__(
        self,
        grid_size: int,
        patch: PatchSpec,
        d_model: int,
        rng: np.random.Generator,
        use_map: bool = True,
        use_traj: bool = True,
        use_location: bool = True,
        use_aug: bool = True,
    ) -> None:
        self.d_model = d_model
        self.start = Parameter(uniform_init(rng, (1, 1, d_model), d_model))
        if use_map:
            self.map_encoder = MapEncoder(grid_size, patch, d_model, rng)
        if use_traj:
            self.traj = Linear(3, d_model, rng)
        if use_location:
            self.location = Linear(len(ARCHETYPES), d_model, rng)
        if use_aug:
            self.aug = Linear(len(AUGMENTATIONS), d_model, rng)

    def forward(self, cond: Conditioning, t_obs: int) -> ConditioningBundle:
        """Map tokens come from the last observed frame, one trajectory token per frame."""
        n = cond.batch
        map_tokens = traj_tokens = loc = aug = None
        if hasattr(self, "map_encoder"):
            map_tokens = self.map_encoder(Tensor(cond.maps[:, t_obs - 1].astype(np.float64)))
        if hasattr(self, "traj"):
            feats = cond.trajectory.copy()
            feats[..., :2] /= TRAJ_SCALE
            traj_tokens = self.traj(Tensor(feats))
        if hasattr(self, "location"):
            loc = ops.reshape(self.location(Tensor(cond.location)), (n, 1, self.d_model))
        if hasattr(self, "aug"):
            aug = ops.reshape(self.aug(Tensor(cond.aug)), (n, 1, self.d_model))
        return ConditioningBundle(map_tokens, traj_tokens, loc, aug)

    def start_token(self, n: int) -> Tensor:
        return ops.expand(self.start, (n, 1, self.d_model))
