from __future__ import annotations

import numpy as np
import pytest

from src.autograd.tensor import reset_default_tape
from src.config import ExperimentConfig, preset_config
from src.ogm.grid import GridSpec


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


@pytest.fixture(autouse=True)
def _fresh_tape():
    reset_default_tape()
    yield
    reset_default_tape()


@pytest.fixture
def small_spec() -> GridSpec:
    return GridSpec(height=32, width=32, resolution=1.0)


@pytest.fixture
def smoke_config(tmp_path) -> ExperimentConfig:
    return preset_config("smoke", run_dir=str(tmp_path / "run"))
