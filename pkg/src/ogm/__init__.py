"""LiDAR scans to ego-centric occupancy grids, augmentations and dataset files."""
from .grid import Cell, GridSpec, scan_to_grid, ternarize

__all__ = ["Cell", "GridSpec", "scan_to_grid", "ternarize"]
