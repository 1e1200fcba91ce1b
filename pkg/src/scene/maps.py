from __future__ import annotations

import math

import numpy as np

from src.ogm.grid import GridSpec
from src.scene.world import OrientedRect, SceneState

MAP_CHANNELS = ("drivable", "stop_line", "crossing")


def _rasterize(rects: tuple[OrientedRect, ...], wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
    mask = np.zeros(wx.shape, dtype=bool)
    for rect in rects:
        mask |= rect.contains(wx, wy)
    return mask


def render_map(state: SceneState, spec: GridSpec) -> np.ndarray:
    """(3, H, W) uint8 map raster in the ego frame of the current pose."""
    xs, ys = spec.cell_centers()
    ex, ey, heading = state.ego.pose
    c, s = math.cos(heading), math.sin(heading)
    wx = ex + c * xs - s * ys
    wy = ey + s * xs + c * ys
    layout = state.layout
    layers = [layout.drivable, layout.stop_lines, layout.crossings]
    return np.stack([_rasterize(rects, wx, wy) for rects in layers]).astype(np.uint8)

