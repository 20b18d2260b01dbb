"""Central finite differences, used as the independent oracle for tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ndmath as nd
from .ndmath import Tensor


def numerical_grad(f: Callable[[], float], t: Tensor, step: float = 1e-4) -> np.ndarray:
    """d f / d t.data by central differences, perturbing ``t`` in place."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest |a - n| / max(|a|, |n|) over coordinates where either side exceeds ``floor``."""
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    big = (np.abs(a) > floor) | (np.abs(n) > floor)
    if not big.any():
        return 0.0
    return float(np.max(np.abs(a[big] - n[big]) / np.maximum(np.abs(a[big]), np.abs(n[big]))))


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[tuple[str, Tensor]],
                    step: float = 1e-4) -> dict[str, float]:
    """Tape gradient vs finite differences for each named tensor; returns max relative error."""
    for _, t in tensors:
        t.zero_grad()
    with nd.Tape() as tape:
        loss = loss_fn()
        nd.backward(loss, tape)
    errors = {}
    for name, t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_grad(lambda: loss_fn().item(), t, step)
        errors[name] = max_relative_error(analytic, numeric)
    return errors
