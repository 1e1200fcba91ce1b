"""Image Similarity distance between ternary occupancy grids.

For every class, each cell of that class in the source grid is charged the
Manhattan distance to the nearest cell of the same class in the target grid;
the charges are averaged per class and summed over classes and both
directions. Distances are in cells.
"""
from __future__ import annotations

import numpy as np

from src.errors import ContractError
from src.ogm.grid import Cell


def manhattan_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Distance in cells from every cell to the nearest ``True`` cell; -1 everywhere when there is none.

    Without obstacles the 4-neighbour BFS distance is the city-block distance,
    which separates per axis: a forward and a backward min-plus sweep along
    columns, then along rows, each touching every cell once.
    """
    if not mask.any():
        return np.full(mask.shape, -1, dtype=np.int64)
    far = sum(mask.shape)
    dist = np.where(mask, 0, far).astype(np.int64)
    for axis in (1, 0):
        view = dist if axis == 1 else dist.T
        for j in range(1, view.shape[1]):
            np.minimum(view[:, j], view[:, j - 1] + 1, out=view[:, j])
        for j in range(view.shape[1] - 2, -1, -1):
            np.minimum(view[:, j], view[:, j + 1] + 1, out=view[:, j])
    return dist


def directed_distance(source: np.ndarray, target: np.ndarray, cls: int, target_dt: np.ndarray | None = None) -> float:
    """Mean distance from ``cls`` cells of ``source`` to ``cls`` cells of ``target``.

    No such cells in the source counts 0; none in the target charges ``H + W`` per cell.
    """
    cells = source == cls
    count = int(cells.sum())
    if count == 0:
        return 0.0
    dt = manhattan_distance_transform(target == cls) if target_dt is None else target_dt
    if dt.max() < 0:
        return float(sum(source.shape))
    return float(dt[cells].sum()) / count


def is_distance(m1: np.ndarray, m2: np.ndarray) -> float:
    if m1.shape != m2.shape or m1.ndim != 2:
        raise ContractError(f"is_distance needs two equal 2-D grids, got {m1.shape} and {m2.shape}")
    total = 0.0
    for cls in Cell:
        total += directed_distance(m1, m2, cls) + directed_distance(m2, m1, cls)
    return total


class DistanceCache:
    """Per-class distance transforms of one target grid, reused against many predictions."""

    def __init__(self, target: np.ndarray) -> None:
        self.target = target
        self.transforms = {cls: manhattan_distance_transform(target == cls) for cls in Cell}

    def psi(self, grid: np.ndarray) -> float:
        if grid.shape != self.target.shape:
            raise ContractError(f"is_distance needs equal grids, got {grid.shape} and {self.target.shape}")
        total = 0.0
        for cls in Cell:
            total += directed_distance(grid, self.target, cls, self.transforms[cls]) + directed_distance(self.target, grid, cls)
        return total
