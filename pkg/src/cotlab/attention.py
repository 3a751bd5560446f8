"""Single-position attention primitives and the block-sparse index pattern.

Positions are 1-based throughout: the pattern for position ``i`` selects
from positions ``1..i``. These primitives are the reference kernels for the
incremental decoder and the ground truth that the batched training forward
is tested against.

Scores are raw dot products (no 1/sqrt(d) scaling), which differs from the
common convention; see ``ModelConfig`` docs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cotlab.funcs import elu_plus_one_np

__all__ = [
    "sparse_index_set",
    "HeadWeights",
    "attn_standard",
    "attn_sparse",
    "attn_linear_direct",
    "attn_linear_recurrent",
    "LinearAttnState",
    "softmax_weights",
    "linear_attention_direct",
]


def sparse_index_set(i: int, block_size: int, window_blocks: int, global_count: int) -> np.ndarray:
    """Positions attended from position ``i`` under the block-sparse pattern.

    The set is the union of a sliding window of ``window_blocks`` blocks,
    ``{j : i - window_blocks*B < j <= i}``, and the last ``global_count``
    positions of every block, ``{j : (j-1) mod B >= B - global_count}``,
    intersected with ``1..i`` so generation stays causal. Always contains
    ``i`` itself. Returned sorted ascending, 1-based.
    """
    B, k, c = block_size, window_blocks, global_count
    if B < 1 or k < 1 or not (1 <= c <= B):
        raise ValueError(f"invalid sparse pattern parameters B={B}, k={k}, c={c}")
    if i < 1:
        raise ValueError("positions are 1-based")
    js = np.arange(1, i + 1)
    window = js > i - k * B
    global_ = (js - 1) % B >= B - c
    return js[window | global_]


@dataclass
class HeadWeights:
    """Per-layer attention weights, one (head_dim x model_dim) matrix stack
    per role. ``wq, wk, wv, wo`` all have shape (heads, head_dim, dim);
    the layer output is sum_h wo[h].T @ head_h, shape (dim,).
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @property
    def heads(self) -> int:
        return self.wq.shape[0]


def softmax_weights(scores: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1-D score vector."""
    if scores.size == 0:
        raise ValueError("empty context")
    e = np.exp(scores - scores.max())
    return e / e.sum()


def attn_standard(x: np.ndarray, ctx: np.ndarray, heads: HeadWeights) -> np.ndarray:
    """Full softmax attention for the query at the last context position.

    ``x`` is the query token embedding (dim,), ``ctx`` the embeddings it may
    attend to, shape (n, dim), n >= 1.
    """
    if ctx.shape[0] == 0:
        raise ValueError("empty context")
    out = np.zeros(heads.wo.shape[2], dtype=x.dtype)
    for h in range(heads.heads):
        q = heads.wq[h] @ x
        k = ctx @ heads.wk[h].T
        v = ctx @ heads.wv[h].T
        w = softmax_weights(k @ q)
        out += heads.wo[h].T @ (w @ v)
    return out


def attn_sparse(x: np.ndarray, ctx: np.ndarray, pattern_row: np.ndarray, heads: HeadWeights) -> np.ndarray:
    """Softmax attention restricted to the 1-based positions in ``pattern_row``."""
    return attn_standard(x, ctx[np.asarray(pattern_row) - 1], heads)


def linear_attention_direct(phi_q: np.ndarray, phi_k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Kernelized attention over a whole stream, quadratic-time form.

    ``phi_q``/``phi_k``: (n, f) positive feature maps; ``v``: (n, dv).
    out[i] = sum_{j<=i} (phi_k[j].phi_q[i]) v[j] / sum_{j<=i} phi_k[j].phi_q[i].
    """
    n = phi_q.shape[0]
    sims = phi_q @ phi_k.T
    mask = np.tril(np.ones((n, n), dtype=phi_q.dtype))
    sims = sims * mask
    den = sims.sum(axis=1, keepdims=True)
    if np.any(den <= 0):
        raise FloatingPointError("non-positive kernel normalizer")
    return (sims @ v) / den


def attn_linear_direct(x: np.ndarray, ctx: np.ndarray, heads: HeadWeights) -> np.ndarray:
    """Kernelized attention output for the query at the last context position."""
    if ctx.shape[0] == 0:
        raise ValueError("empty context")
    out = np.zeros(heads.wo.shape[2], dtype=x.dtype)
    for h in range(heads.heads):
        pq = elu_plus_one_np(heads.wq[h] @ x)
        pk = elu_plus_one_np(ctx @ heads.wk[h].T)
        v = ctx @ heads.wv[h].T
        sims = pk @ pq
        den = sims.sum()
        if den <= 0:
            raise FloatingPointError("non-positive kernel normalizer")
        out += heads.wo[h].T @ ((sims @ v) / den)
    return out


@dataclass
class LinearAttnState:
    """Running per-head state of the recurrent kernelized-attention form:
    ``s`` accumulates phi(k_i) v_i^T outer products, ``z`` accumulates
    phi(k_i). Both start at zero before the first token.
    """

    s: np.ndarray  # (heads, feature_dim, value_dim)
    z: np.ndarray  # (heads, feature_dim)

    @classmethod
    def zeros(cls, heads: int, feature_dim: int, value_dim: int, dtype=np.float64) -> "LinearAttnState":
        return cls(
            s=np.zeros((heads, feature_dim, value_dim), dtype=dtype),
            z=np.zeros((heads, feature_dim), dtype=dtype),
        )

    def copy(self) -> "LinearAttnState":
        return LinearAttnState(self.s.copy(), self.z.copy())


def attn_linear_recurrent(x: np.ndarray, heads: HeadWeights, state: LinearAttnState) -> np.ndarray:
    """One step of the constant-state recurrent form. Updates ``state`` in
    place with the new token, then reads out the attention value:

        s_i = s_{i-1} + phi(k_i) v_i^T,  z_i = z_{i-1} + phi(k_i),
        out_i^T = phi(q_i)^T s_i / phi(q_i)^T z_i
    """
    H, f, dv = state.s.shape
    if heads.heads != H or heads.wq.shape[1] != f or heads.wv.shape[1] != dv:
        raise ValueError("state shape does not match head weights")
    out = np.zeros(heads.wo.shape[2], dtype=x.dtype)
    for h in range(H):
        pk = elu_plus_one_np(heads.wk[h] @ x)
        v = heads.wv[h] @ x
        state.s[h] += np.outer(pk, v)
        state.z[h] += pk
        pq = elu_plus_one_np(heads.wq[h] @ x)
        den = pq @ state.z[h]
        if den <= 0:
            raise FloatingPointError("non-positive kernel normalizer")
        out += heads.wo[h].T @ ((pq @ state.s[h]) / den)
    return out
