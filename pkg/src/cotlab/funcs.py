"""Plain-numpy nonlinearities shared by the autodiff engine, the inference
engine, and the explicit-weight gadget builders."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = ["gelu_np", "gelu_grad_np", "elu_plus_one_np", "relu_np", "normal_cdf"]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def normal_cdf(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(np.asarray(x) * _INV_SQRT2))


def gelu_np(x: np.ndarray) -> np.ndarray:
    """Exact GeLU: x * Phi(x), erf form (not the tanh approximation)."""
    x = np.asarray(x)
    return x * normal_cdf(x)


def gelu_grad_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return normal_cdf(x) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def elu_plus_one_np(x: np.ndarray) -> np.ndarray:
    """x+1 for x >= 0, exp(x) for x < 0; always strictly positive."""
    x = np.asarray(x)
    neg = x < 0
    return np.where(neg, np.exp(np.where(neg, x, 0.0)), x + 1.0)


def relu_np(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x), 0.0)
