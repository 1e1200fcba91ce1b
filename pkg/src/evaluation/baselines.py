from __future__ import annotations

import numpy as np

from src.errors import ContractError


def fixed_frame_baseline(observed: np.ndarray, n_steps: int) -> np.ndarray:
    """Repeat the last of (T_O, H, W) observed grids ``n_steps`` times."""
    if len(observed) < 1:
        raise ContractError("fixed-frame baseline needs at least one observed grid")
    return np.repeat(observed[-1:], n_steps, axis=0)
