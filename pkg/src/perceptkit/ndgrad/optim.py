"""Gradient-descent updates."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


class SGD:
    """Momentum SGD: v <- momentum*v + grad; p <- p - lr*v.

    Velocity starts at zero for every parameter. ``lr`` may be changed
    between steps (multi-factor schedules).
    """

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else 0.0
            v *= self.momentum
            v += g
            p.data -= self.lr * v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def sgd_momentum_step(params, grads, velocities, lr: float, momentum: float):
    """Functional form of one momentum update, mutating params/velocities."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    for p, g, v in zip(params, grads, velocities):
        v *= momentum
        v += g
        p -= lr * v
    return params
