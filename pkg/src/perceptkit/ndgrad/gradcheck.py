"""Central finite-difference gradient verification.

The numeric side only ever calls the forward pass, so it is independent of
every analytic backward implementation it is used to check. Run it on
float64 tensors; finite differences are unreliable in float32.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_gradient(
    fn: Callable[[], Tensor], wrt: Tensor, step: float = 1e-5
) -> np.ndarray:
    """d fn() / d wrt by central differences, one element at a time."""
    base = wrt.data
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn().data)
        flat[i] = orig - step
        lo = float(fn().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
) -> float:
    """Compare analytic and numeric gradients of scalar ``fn``.

    Returns the worst relative discrepancy over all inputs; raises
    AssertionError when it exceeds ``tol``. The relative measure is
    |a - n| / max(1, |a|, |n|) so values near zero are judged absolutely.
    """
    for t in inputs:
        t.zero_grad()
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad.copy()
        numeric = numeric_gradient(fn, t, step=step)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    if worst > tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e} > {tol:.1e}")
    return worst
