"""Synthetic driving worlds, LiDAR sensing and map rasters."""
from .lidar import LidarScan, raycast
from .maps import render_map
from .world import ARCHETYPES, Archetype, Intent, SceneState, build_world, planned_trajectory, step

__all__ = [
    "ARCHETYPES",
    "Archetype",
    "Intent",
    "LidarScan",
    "SceneState",
    "build_world",
    "planned_trajectory",
    "raycast",
    "render_map",
    "step",
]
