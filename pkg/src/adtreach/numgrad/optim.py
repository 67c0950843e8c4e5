"""RMSProp, the optimizer shared by every training procedure."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}; step aborted")
        self.name = name


@dataclass
class OptimState:
    lr: float
    rho: float = 0.9
    eps: float = 1e-8
    mean_sq: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        if self.eps <= 0 or self.lr <= 0:
            raise ValueError("lr and eps must be positive")


def rmsprop_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 state: OptimState, names=None) -> dict[str, np.ndarray]:
    """Update ``params`` in place and return it.

    ``names`` restricts the update to a subset of ``params``; gradients for
    other names are ignored. Every gradient is checked before anything is
    modified, so a bad gradient leaves params and state untouched.
    """
    keys = list(params if names is None else names)
    for k in keys:
        if k not in grads:
            raise KeyError(f"no gradient for parameter {k!r}")
        if grads[k].shape != params[k].shape:
            raise ValueError(f"gradient shape {grads[k].shape} != param shape "
                             f"{params[k].shape} for {k!r}")
        if not np.all(np.isfinite(grads[k])):
            raise NonFiniteGradient(k)
    rho, eps, lr = state.rho, state.eps, state.lr
    for k in keys:
        g = grads[k]
        ms = state.mean_sq.get(k)
        if ms is None:
            ms = np.zeros_like(params[k])
        ms = rho * ms + (1.0 - rho) * g * g
        state.mean_sq[k] = ms
        params[k] -= lr * g / np.sqrt(ms + eps)
    return params
