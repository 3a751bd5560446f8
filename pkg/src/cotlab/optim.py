"""AdamW with decoupled weight decay for dicts of parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cotlab.tensor import Tensor

__all__ = ["AdamWState", "adamw_step"]


@dataclass
class AdamWState:
    """First/second moment buffers plus hyperparameters.

    Moments are keyed and shaped like the parameters; ``t`` counts completed
    steps and is incremented before bias correction.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            elif self.m[name].shape != p.data.shape:
                raise ValueError(f"moment shape mismatch for {name!r}")


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamWState) -> None:
    """One AdamW update, in place on ``params``.

    Weight decay is decoupled: parameters shrink by lr*wd*param directly
    rather than having the decay folded into the gradient.
    """
    state.ensure(params)
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        mhat = m / bc1
        vhat = v / bc2
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
