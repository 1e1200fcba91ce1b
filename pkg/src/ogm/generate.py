"""Turn simulated worlds into occupancy-grid sequence samples."""
from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from src.common import stream_rng
from src.ogm.augment import apply_augmentation
from src.ogm.dataset import AUGMENTATIONS, SequenceSample
from src.ogm.grid import GridSpec, scan_to_grid
from src.scene.lidar import raycast
from src.scene.maps import render_map
from src.scene.world import ARCHETYPES, Archetype, SceneState, build_world, planned_trajectory, step, with_flipped_intents

logger = logging.getLogger(__name__)

TEST_INDEX_OFFSET = 1_000_000


@dataclass(frozen=True)
class GenerationSettings:
    spec: GridSpec
    t_obs: int
    t_fut: int
    n_beams: int = 360
    max_range: float = 30.0
    archetypes: tuple[str, ...] = tuple(a.value for a in ARCHETYPES)
    augment: bool = False
    seed: int = 0


def simulate_grids(state: SceneState, n_frames: int, settings: GenerationSettings) -> tuple[np.ndarray, np.ndarray]:
    """(T, H, W) float32-quantized grids and (T, 3, H, W) map rasters."""
    grids = np.empty((n_frames, *settings.spec.shape))
    maps = np.empty((n_frames, 3, *settings.spec.shape), dtype=np.uint8)
    for t in range(n_frames):
        scan = raycast(state, settings.n_beams, settings.max_range)
        grids[t] = scan_to_grid(scan, settings.spec)
        maps[t] = render_map(state, settings.spec)
        state = step(state)
    return grids.astype(np.float32).astype(np.float64), maps


def generate_sample(index: int, settings: GenerationSettings) -> SequenceSample:
    rng = stream_rng(settings.seed, index)
    archetype = Archetype(settings.archetypes[int(rng.integers(len(settings.archetypes)))])
    world_seed = int(rng.integers(2**31))
    state = build_world(archetype, world_seed)
    total = settings.t_obs + settings.t_fut

    grids, maps = simulate_grids(state, total, settings)
    alt = None
    if state.fork_intents():
        alt, _ = simulate_grids(with_flipped_intents(state), total, settings)
    sample = SequenceSample(
        grids=grids,
        maps=maps,
        trajectory=planned_trajectory(state, total),
        location=ARCHETYPES.index(archetype),
        aug=0,
        t_obs=settings.t_obs,
        t_fut=settings.t_fut,
        alt_grids=alt,
    )
    if settings.augment:
        sample = apply_augmentation(sample, AUGMENTATIONS[int(rng.integers(len(AUGMENTATIONS)))])
    return sample


def _generate_one(args: tuple[int, GenerationSettings]) -> SequenceSample:
    return generate_sample(*args)


def generate_sequences(
    settings: GenerationSettings, indices: Sequence[int], workers: int = 1, progress: bool = True
) -> list[SequenceSample]:
    """Samples for ``indices`` in order; every index has its own RNG stream."""
    jobs = [(int(i), settings) for i in indices]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(_generate_one, jobs, chunksize=4), total=len(jobs), disable=not progress))
    else:
        results = [_generate_one(job) for job in tqdm(jobs, disable=not progress, desc="gen-data")]
    logger.info("generated %d sequences (%s)", len(results), ",".join(settings.archetypes))
    return results
