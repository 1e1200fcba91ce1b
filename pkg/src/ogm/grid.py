"""Ego-centric occupancy grids.

Frame convention: row index grows against ego +x (row 0 is the far front),
column index grows against ego +y (column 0 is the far left). The ego sits at
the grid center. Cell ``(i, j)`` has its center at
``x = (H/2 - i - 0.5) * res``, ``y = (W/2 - j - 0.5) * res``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING

import numpy as np

from src.errors import ContractError, DimensionError

if TYPE_CHECKING:
    from src.scene.lidar import LidarScan

logger = logging.getLogger(__name__)

L_HIT = 2.2
L_FREE = -1.4
L_CLAMP = 6.0
T_OCC = 0.65
T_FREE = 0.35


@dataclass(frozen=True)
class GridSpec:
    height: int = 128
    width: int = 128
    resolution: float = 1.0 / 3.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def extent(self) -> tuple[float, float]:
        return self.height * self.resolution, self.width * self.resolution

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(H, W) arrays of ego-frame x and y at every cell center."""
        i = np.arange(self.height)[:, None]
        j = np.arange(self.width)[None, :]
        xs = (self.height / 2 - i - 0.5) * self.resolution
        ys = (self.width / 2 - j - 0.5) * self.resolution
        return np.broadcast_to(xs, self.shape).copy(), np.broadcast_to(ys, self.shape).copy()

    def to_continuous(self, x: np.ndarray | float, y: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
        """Fractional (row, col) coordinates; integer values lie on cell borders."""
        a = self.height / 2 - np.asarray(x, dtype=np.float64) / self.resolution
        b = self.width / 2 - np.asarray(y, dtype=np.float64) / self.resolution
        return a, b

    def point_to_cell(self, x: np.ndarray | float, y: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
        """Containing cell; a point on a border belongs to the larger index."""
        a, b = self.to_continuous(x, y)
        return np.floor(a).astype(np.int64), np.floor(b).astype(np.int64)

    def inside(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        return (i >= 0) & (i < self.height) & (j >= 0) & (j < self.width)

    def check(self, values: np.ndarray) -> None:
        if values.shape[-2:] != self.shape:
            raise DimensionError(f"grid of shape {values.shape} does not match spec {self.shape}")


class Cell(IntEnum):
    FREE = 0
    OCCLUDED = 1
    OCCUPIED = 2

    @property
    def probability(self) -> float:
        return {Cell.FREE: 0.0, Cell.OCCLUDED: 0.5, Cell.OCCUPIED: 1.0}[self]


def traverse_beams(
    spec: GridSpec, angles: np.ndarray, lengths: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cells crossed by rays from the ego along ``angles`` for ``lengths`` meters.

    Exact grid traversal: every crossing with a row or column border splits a
    ray into pieces, and each piece is charged to the cell containing its
    midpoint. Returns flat ``(beam, row, col)`` index arrays, ordered by beam
    then distance, clipped to the grid.
    """
    n = len(angles)
    a0, b0 = spec.height / 2, spec.width / 2
    da = -np.cos(angles) / spec.resolution
    db = -np.sin(angles) / spec.resolution

    ka = np.arange(spec.height + 1, dtype=np.float64)[None, :]
    kb = np.arange(spec.width + 1, dtype=np.float64)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (ka - a0) / da[:, None]
        tb = (kb - b0) / db[:, None]
    ends = lengths[:, None]
    ts = np.concatenate([np.zeros((n, 1)), ta, tb, ends], axis=1)
    ts[~np.isfinite(ts) | (ts < 0) | (ts > ends)] = np.inf
    ts.sort(axis=1)

    t0, t1 = ts[:, :-1], ts[:, 1:]
    piece = np.isfinite(t1) & (t1 > t0)
    mid = np.where(piece, 0.5 * (t0 + t1), 0.0)
    rows = np.floor(a0 + mid * da[:, None]).astype(np.int64)
    cols = np.floor(b0 + mid * db[:, None]).astype(np.int64)
    keep = piece & spec.inside(rows, cols)
    beam = np.broadcast_to(np.arange(n)[:, None], keep.shape)
    return beam[keep], rows[keep], cols[keep]


def scan_to_log_odds(scan: LidarScan, spec: GridSpec) -> np.ndarray:
    """Accumulated, clamped log-odds of one scan (prior 0)."""
    hit = np.isfinite(scan.ranges)
    lengths = np.where(hit, scan.ranges, scan.max_range)
    beam, rows, cols = traverse_beams(spec, scan.angles, lengths)

    hx = scan.ranges[hit] * np.cos(scan.angles[hit])
    hy = scan.ranges[hit] * np.sin(scan.angles[hit])
    hi, hj = spec.point_to_cell(hx, hy)
    hit_row = np.full(len(scan.angles), -1, dtype=np.int64)
    hit_col = np.full(len(scan.angles), -1, dtype=np.int64)
    hit_row[hit], hit_col[hit] = hi, hj

    free = ~((rows == hit_row[beam]) & (cols == hit_col[beam]))
    log_odds = np.zeros(spec.height * spec.width)
    np.add.at(log_odds, rows[free] * spec.width + cols[free], L_FREE)

    inside = spec.inside(hi, hj)
    np.add.at(log_odds, hi[inside] * spec.width + hj[inside], L_HIT)
    return np.clip(log_odds, -L_CLAMP, L_CLAMP).reshape(spec.shape)


def log_odds_to_probability(log_odds: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-log_odds))


def scan_to_grid(scan: LidarScan, spec: GridSpec) -> np.ndarray:
    """Inverse sensor model: (H, W) occupancy probabilities for one ego-frame scan."""
    return log_odds_to_probability(scan_to_log_odds(scan, spec))


def ternarize(grid: np.ndarray, t_occ: float = T_OCC, t_free: float = T_FREE) -> np.ndarray:
    """Map probabilities to :class:`Cell` values (int8)."""
    if not 0.0 <= t_free < t_occ <= 1.0:
        raise ContractError(f"thresholds must satisfy 0 <= t_free < t_occ <= 1, got ({t_occ}, {t_free})")
    out = np.full(grid.shape, Cell.OCCLUDED, dtype=np.int8)
    out[grid > t_occ] = Cell.OCCUPIED
    out[grid < t_free] = Cell.FREE
    return out


def embed_ternary(ternary: np.ndarray) -> np.ndarray:
    """Inverse view of :func:`ternarize`: occupied 1.0, free 0.0, occluded 0.5."""
    table = np.array([Cell(c).probability for c in sorted(Cell)])
    return table[ternary.astype(np.int64)]
