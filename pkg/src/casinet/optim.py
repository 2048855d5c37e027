"""Poly learning-rate schedule and SGD with momentum."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autograd import Param
from .config import OptimConfig


def poly_lr(it: int, cfg: OptimConfig) -> float:
    if not 0 <= it <= cfg.total_iters:
        raise ValueError(f"iteration {it} outside [0, {cfg.total_iters}]")
    return cfg.base_lr * (1.0 - it / cfg.total_iters) ** cfg.poly_power


class SGD:
    """v <- momentum * v + grad + wd * param;  param <- param - lr * v.

    Weight decay is skipped for params with ``decay=False`` (BN scale and shift).
    """

    def __init__(self, params: Sequence[Param], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        if lr < 0:
            raise ValueError("lr must be >= 0")
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient for {p.name!r}")
        for p, v in zip(self.params, self.velocity):
            g = p.grad + self.weight_decay * p.data if p.decay else p.grad
            v *= self.momentum
            v += g
            p.data -= lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def sgd_step(params, grads, lr: float, momentum: float, weight_decay: float, velocity=None):
    """Functional form over plain arrays; returns (new_params, new_velocity)."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if any(not np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError("non-finite gradient")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_v = [momentum * v + g + weight_decay * p for p, g, v in zip(params, grads, velocity)]
    new_p = [p - lr * v for p, v in zip(params, new_v)]
    return new_p, new_v
