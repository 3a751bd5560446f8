"""Finite-difference checking of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from cotlab.tensor import Tensor

__all__ = ["grad_check"]


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients of a scalar function against central
    differences (f(x+h) - f(x-h)) / 2h, coordinate by coordinate, in float64.

    Returns the maximum relative error over all coordinates of all
    parameters, with relative error |a-b| / max(|a|, |b|, 1e-6).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    tensors = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}
    out = f(tensors)
    if out.size != 1:
        raise ValueError("grad_check expects a scalar-valued function")
    out.backward()
    worst = 0.0
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = f(tensors).item()
            flat[idx] = orig - h
            fm = f(tensors).item()
            flat[idx] = orig
            fd = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[idx]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst
