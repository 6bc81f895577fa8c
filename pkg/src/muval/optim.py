"""AdamW with decoupled weight decay and the per-epoch exponential schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from muval.errors import DimensionError, NumericError


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimizerState,
               lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.01) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One AdamW update. Inputs are not mutated; the result keeps each parameter's dtype.

    Moments are kept in float64. Parameters without a gradient entry are
    treated as having zero gradient.
    """
    b1, b2 = betas
    t = state.t + 1
    new_state = OptimizerState({}, {}, t)
    new_params = {}
    for name, theta in params.items():
        g = np.asarray(grads.get(name, 0.0), dtype=np.float64)
        if g.shape not in ((), theta.shape):
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
        g = np.broadcast_to(g, theta.shape)
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        th = np.asarray(theta, dtype=np.float64)
        updated = th - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * th
        new_params[name] = updated.astype(np.asarray(theta).dtype)
        new_state.m[name] = np.asarray(m, dtype=np.float64)
        new_state.v[name] = np.asarray(v, dtype=np.float64)
    return new_params, new_state


def lr_schedule(lr0: float, gamma: float, epoch: int) -> float:
    """Learning rate for 0-based ``epoch``: ``lr0 * gamma ** epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return lr0 * gamma ** epoch
