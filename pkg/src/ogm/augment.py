from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from src.errors import ContractError
from src.ogm.dataset import AUGMENTATIONS, SequenceSample

# Exact rotation of ego-frame (x, y) by k quarter turns counterclockwise.
_QUARTER = {
    0: np.array([[1, 0], [0, 1]]),
    1: np.array([[0, -1], [1, 0]]),
    2: np.array([[-1, 0], [0, -1]]),
    3: np.array([[0, 1], [-1, 0]]),
}

# Consecutive planned positions closer than this (meters) count as standing still.
_STILL = 1e-9


def travel_heading(trajectory: np.ndarray, index: int) -> float:
    """Direction of travel at row ``index``: toward the next distinct position, else from the previous one."""
    xy = trajectory[:, :2]
    for j in range(index + 1, len(xy)):
        dx, dy = xy[j] - xy[index]
        if math.hypot(dx, dy) > _STILL:
            return math.atan2(dy, dx)
    for j in range(index - 1, -1, -1):
        dx, dy = xy[index] - xy[j]
        if math.hypot(dx, dy) > _STILL:
            return math.atan2(dy, dx)
    return 0.0


def renormalize_trajectory(trajectory: np.ndarray, origin: int) -> np.ndarray:
    """Re-express (T, 3) planned positions in the ego frame of row ``origin``.

    The ego faces its direction of travel, so the frame turns by the change in
    travel heading between row 0 and ``origin``. Column 2 (z) is carried as is.
    """
    turn = travel_heading(trajectory, origin) - travel_heading(trajectory, 0)
    c, s = math.cos(turn), math.sin(turn)
    dx = trajectory[:, 0] - trajectory[origin, 0]
    dy = trajectory[:, 1] - trajectory[origin, 1]
    out = trajectory.astype(np.float64, copy=True)
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[origin, :2] = 0.0
    return out


def _rotate(sample: SequenceSample, k: int) -> SequenceSample:
    if sample.grids.shape[-1] != sample.grids.shape[-2]:
        raise ContractError(f"rotation needs square grids, got {sample.grids.shape[-2:]}")
    traj = sample.trajectory.copy()
    traj[:, :2] = sample.trajectory[:, :2] @ _QUARTER[k].T
    alt = None if sample.alt_grids is None else np.rot90(sample.alt_grids, k, axes=(-2, -1)).copy()
    return replace(
        sample,
        grids=np.rot90(sample.grids, k, axes=(-2, -1)).copy(),
        maps=np.rot90(sample.maps, k, axes=(-2, -1)).copy(),
        trajectory=traj,
        alt_grids=alt,
    )


def _mirror(sample: SequenceSample) -> SequenceSample:
    traj = sample.trajectory.copy()
    traj[:, 1] = -traj[:, 1]
    alt = None if sample.alt_grids is None else sample.alt_grids[..., ::-1].copy()
    return replace(
        sample,
        grids=sample.grids[..., ::-1].copy(),
        maps=sample.maps[..., ::-1].copy(),
        trajectory=traj,
        alt_grids=alt,
    )


def _reverse(sample: SequenceSample) -> SequenceSample:
    # The last frame becomes frame 0, so the trajectory is re-anchored there.
    alt = None if sample.alt_grids is None else sample.alt_grids[::-1].copy()
    return replace(
        sample,
        grids=sample.grids[::-1].copy(),
        maps=sample.maps[::-1].copy(),
        trajectory=renormalize_trajectory(sample.trajectory, len(sample.trajectory) - 1)[::-1].copy(),
        alt_grids=alt,
    )


def apply_augmentation(sample: SequenceSample, tag: str) -> SequenceSample:
    """Transform rasters and trajectory consistently and record ``tag`` as aug id."""
    if tag not in AUGMENTATIONS:
        raise ContractError(f"bad augmentation '{tag}' (expected one of {list(AUGMENTATIONS)})")
    if tag == "identity":
        out = sample
    elif tag == "mirror_lr":
        out = _mirror(sample)
    elif tag == "time_reverse":
        out = _reverse(sample)
    else:
        out = _rotate(sample, {"rotate_90": 1, "rotate_180": 2, "rotate_270": 3}[tag])
    return replace(out, aug=AUGMENTATIONS.index(tag))
