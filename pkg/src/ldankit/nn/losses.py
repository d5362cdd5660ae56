from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target.astype(pred.dtype, copy=False)
    n = diff.size
    return float(np.sum(diff.astype(np.float64) ** 2) / n), (2.0 / n) * diff


@dataclass
class CriticLosses:
    critic_objective: float  # mean D(synth) - mean D(real); the critic maximizes it
    generator_objective: float  # -mean D(real); the feature net minimizes it
    critic_grad_synth: np.ndarray  # d(-critic_objective)/d d_synth
    critic_grad_real: np.ndarray  # d(-critic_objective)/d d_real
    generator_grad_real: np.ndarray  # d(generator_objective)/d d_real


def critic_losses(d_synth, d_real) -> CriticLosses:
    """Wasserstein critic objectives for batches of scalar critic scores."""
    ds = np.asarray(d_synth)
    dr = np.asarray(d_real)
    if ds.size == 0 or dr.size == 0:
        raise InvalidInputError("critic_losses needs non-empty batches")
    ms = float(np.mean(ds, dtype=np.float64))
    mr = float(np.mean(dr, dtype=np.float64))
    return CriticLosses(
        critic_objective=ms - mr,
        generator_objective=-mr,
        critic_grad_synth=np.full(ds.shape, -1.0 / ds.size, dtype=ds.dtype),
        critic_grad_real=np.full(dr.shape, 1.0 / dr.size, dtype=dr.dtype),
        generator_grad_real=np.full(dr.shape, -1.0 / dr.size, dtype=dr.dtype),
    )
