"""Best-of-N Image Similarity reports and the statistics around them."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from src.errors import ContractError, DimensionError
from src.evaluation.image_similarity import DistanceCache
from src.ogm.grid import T_FREE, T_OCC, ternarize

VARIANTS = ("fixed_frame", "deterministic", "stochastic", "refined")
# Cells where the two fork futures differ by more than this decide the realized branch.
BRANCH_MARGIN = 0.1


@dataclass(eq=False)
class ISReport:
    """``psi`` is (sequences, samples, steps).

    Every horizon picks its own best sample per sequence, so ``score(t_fut)``
    and ``score(horizon)`` may come from different samples. ``per_sequence``
    follows the sample that is best over all steps.
    """

    variant: str
    psi: np.ndarray
    sequence_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.psi.ndim != 3 or len(self.sequence_ids) != len(self.psi):
            raise DimensionError(f"psi {self.psi.shape} for {len(self.sequence_ids)} sequence ids")

    @property
    def n_sequences(self) -> int:
        return self.psi.shape[0]

    @property
    def n_samples(self) -> int:
        return self.psi.shape[1]

    @property
    def steps(self) -> int:
        return self.psi.shape[2]

    @property
    def best_of_n(self) -> bool:
        return self.n_samples > 1

    def chosen(self, steps: int) -> np.ndarray:
        """Per-sequence index of the best sample over the first ``steps`` steps."""
        if not 1 <= steps <= self.steps:
            raise ContractError(f"report holds {self.steps} steps, asked for {steps}")
        return np.argmin(self.psi[:, :, :steps].mean(axis=2), axis=1)

    @property
    def per_sequence(self) -> np.ndarray:
        return self.psi[np.arange(self.n_sequences), self.chosen(self.steps)]

    @property
    def per_step(self) -> np.ndarray:
        return self.per_sequence.mean(axis=0)

    def sequence_means(self, steps: int) -> np.ndarray:
        return self.psi[:, :, :steps].mean(axis=2)[np.arange(self.n_sequences), self.chosen(steps)]

    def score(self, steps: int) -> float:
        return float(self.sequence_means(steps).mean())

    def stderr(self, steps: int) -> float:
        return standard_error(self.sequence_means(steps))


def standard_error(values: np.ndarray) -> float:
    """``std / sqrt(n)`` with the sample standard deviation; 0 for fewer than two values."""
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def psi_table(samples: np.ndarray, truth: np.ndarray, t_occ: float = T_OCC, t_free: float = T_FREE) -> np.ndarray:
    """(S, steps) psi of (S, steps, H, W) predicted probabilities against (steps, H, W) truth."""
    if samples.ndim != 4 or samples.shape[1:] != truth.shape:
        raise DimensionError(f"predictions {samples.shape} do not match truth {truth.shape}")
    pred = ternarize(samples, t_occ, t_free)
    gt = ternarize(truth, t_occ, t_free)
    out = np.empty(samples.shape[:2])
    for t in range(truth.shape[0]):
        cache = DistanceCache(gt[t])
        for s in range(samples.shape[0]):
            out[s, t] = cache.psi(pred[s, t])
    return out


def best_sample(psi: np.ndarray, steps: int | None = None) -> int:
    """Index of the sample with the lowest mean psi over the first ``steps`` steps (all by default; first on ties)."""
    return int(np.argmin(psi[:, :steps].mean(axis=1)))


def evaluate(
    psi: list[np.ndarray],
    variant: str,
    sequence_ids: tuple[int, ...] | None = None,
) -> ISReport:
    """Reduce per-sequence (S, steps) psi tables to a best-of-N report."""
    if not psi:
        raise ContractError(f"no sequences to evaluate for variant '{variant}'")
    if any(p.shape != psi[0].shape for p in psi):
        raise DimensionError(f"psi tables of variant '{variant}' differ in shape")
    ids = sequence_ids if sequence_ids is not None else tuple(range(len(psi)))
    return ISReport(variant, np.stack(psi), ids)


def evaluate_grids(
    predictions: list[np.ndarray],
    truths: list[np.ndarray],
    variant: str,
    t_occ: float = T_OCC,
    t_free: float = T_FREE,
) -> ISReport:
    """Best-of-N report from decoded (S, steps, H, W) predictions and (steps, H, W) truths."""
    if len(predictions) != len(truths):
        raise ContractError(f"{len(predictions)} predictions for {len(truths)} ground-truth sequences")
    return evaluate([psi_table(p, t, t_occ, t_free) for p, t in zip(predictions, truths)], variant)


def realized_branch(sample: np.ndarray, truth: np.ndarray, alt: np.ndarray) -> int | None:
    """0 for the recorded future, 1 for the counterfactual one, ``None`` if they never differ."""
    mask = np.abs(truth - alt) > BRANCH_MARGIN
    if not mask.any():
        return None
    err_truth = float(np.sum((sample[mask] - truth[mask]) ** 2))
    err_alt = float(np.sum((sample[mask] - alt[mask]) ** 2))
    return 0 if err_truth <= err_alt else 1


def branches_covered(samples: np.ndarray, truth: np.ndarray, alt: np.ndarray) -> bool | None:
    """Whether (S, H, W) final-step samples realize both fork branches."""
    branches = {realized_branch(s, truth, alt) for s in samples}
    if None in branches:
        return None
    return branches == {0, 1}


def sign_test(a: np.ndarray, b: np.ndarray) -> float:
    """One-sided p-value that ``a`` is lower than ``b`` more often than chance; ties dropped."""
    if a.shape != b.shape:
        raise DimensionError(f"paired samples {a.shape} and {b.shape} differ")
    wins = int(np.sum(a < b))
    n = wins + int(np.sum(a > b))
    if n == 0:
        return 1.0
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2.0**n
