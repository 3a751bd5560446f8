"""Deterministic seed derivation for reproducible runs.

Every stochastic component takes an explicit seed; nested work items derive
child seeds from (master seed, index keys) via numpy's SeedSequence so that
parallel and sequential execution produce identical streams.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed", "make_rng"]


def derive_seed(master: int, *keys: int) -> int:
    """A stable 63-bit child seed for (master, key path)."""
    ss = np.random.SeedSequence([int(master), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def make_rng(master: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master), *[int(k) for k in keys]])))
