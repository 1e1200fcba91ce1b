from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from src.autograd.tensor import Tape, Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = float(np.linalg.norm(analytic - numeric))
    den = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-12)
    return num / den


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    eps: float = 1e-5,
    max_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between tape gradients and central differences.

    ``fn`` must rebuild the scalar loss from the current payloads of ``tensors``
    without consuming randomness. With ``max_per_tensor`` only that many
    coordinates per tensor are probed.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)

    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t in tensors:
        analytic_full = t.grad if t.grad is not None else np.zeros(t.shape)
        if max_per_tensor is not None and t.size > max_per_tensor:
            idx = np.sort(rng.choice(t.size, size=max_per_tensor, replace=False))
        else:
            idx = np.arange(t.size)
        flat = t.data.reshape(-1)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                plus = fn().item()
            flat[i] = orig - eps
            with no_grad():
                minus = fn().item()
            flat[i] = orig
            numeric[j] = (plus - minus) / (2.0 * eps)
        worst = max(worst, relative_error(analytic_full.reshape(-1)[idx], numeric))
    return worst
