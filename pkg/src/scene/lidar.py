from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.errors import ContractError
from src.scene.world import SceneState

DEFAULT_BEAMS = 360
DEFAULT_MAX_RANGE = 30.0


@dataclass(frozen=True, eq=False)
class LidarScan:
    """Ego-frame range scan; ``inf`` marks a beam without a return."""

    angles: np.ndarray = field(repr=False)
    ranges: np.ndarray = field(repr=False)
    max_range: float

    @property
    def n_beams(self) -> int:
        return len(self.angles)

    def points(self) -> np.ndarray:
        """(n, 2) ego-frame return points of the beams that hit something."""
        hit = np.isfinite(self.ranges)
        r = self.ranges[hit]
        a = self.angles[hit]
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def beam_angles(n_beams: int) -> np.ndarray:
    """Strictly increasing over [-pi, pi); beam ``n/2`` points straight ahead."""
    return np.pi * (2.0 * np.arange(n_beams) - n_beams) / n_beams


def obstacle_segments(state: SceneState) -> np.ndarray:
    parts = [state.static_segments.reshape(-1, 4)]
    parts.extend(agent.footprint().edges() for agent in state.agents)
    return np.concatenate(parts, axis=0)


def cast_rays(origin: np.ndarray, directions: np.ndarray, segments: np.ndarray, max_range: float) -> np.ndarray:
    """Nearest positive hit distance of each unit ray against all segments."""
    ranges = np.full(len(directions), np.inf)
    if len(segments) == 0:
        return ranges
    p = segments[:, :2] - origin
    e = segments[:, 2:] - segments[:, :2]
    dx, dy = directions[:, 0:1], directions[:, 1:2]
    denom = dx * e[None, :, 1] - dy * e[None, :, 0]
    t_num = (p[:, 0] * e[:, 1] - p[:, 1] * e[:, 0])[None, :]
    u_num = p[None, :, 0] * dy - p[None, :, 1] * dx
    with np.errstate(divide="ignore", invalid="ignore"):
        t = t_num / denom
        u = u_num / denom
    valid = (denom != 0) & (t > 0) & (u >= 0) & (u <= 1) & (t <= max_range)
    hits = np.where(valid, t, np.inf).min(axis=1)
    return np.minimum(ranges, hits)


def raycast(state: SceneState, n_beams: int = DEFAULT_BEAMS, max_range: float = DEFAULT_MAX_RANGE) -> LidarScan:
    if n_beams < 1:
        raise ContractError(f"raycast needs n_beams >= 1, got {n_beams}")
    x, y, heading = state.ego.pose
    angles = beam_angles(n_beams)
    world = heading + angles
    directions = np.stack([np.cos(world), np.sin(world)], axis=1)
    ranges = cast_rays(np.array([x, y]), directions, obstacle_segments(state), max_range)
    return LidarScan(angles, ranges, float(max_range))


def scan_from_segments(segments: np.ndarray, n_beams: int, max_range: float) -> LidarScan:
    """Scan from the origin facing +x against bare segments (no world needed)."""
    angles = beam_angles(n_beams)
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return LidarScan(angles, cast_rays(np.zeros(2), directions, np.asarray(segments, dtype=np.float64), max_range), max_range)
