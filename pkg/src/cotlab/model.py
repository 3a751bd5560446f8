"""Autoregressive transformer variants: configuration, parameters, and the
batched (teacher-forced) forward used for training.

Architecture, per block: h = x + Attn(x); x = h + FFN(h). There is no layer
normalization and attention scores are raw dot products without the usual
1/sqrt(d) factor; both behaviours can be switched on via ``layer_norm`` /
``scale_scores`` but default off. FFN is W2 GeLU(W1 x) with no biases.

Attention variants share the Q/K/V/O layout and differ only in how a
position's context is formed:

* ``standard`` -- full causal softmax attention,
* ``sparse``   -- softmax attention over the block-sparse index set
  (see :func:`cotlab.attention.sparse_index_set`),
* ``linear``   -- kernelized attention with feature map elu(x)+1, which
  admits a constant-size recurrent state at generation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from cotlab import tensor as T
from cotlab.attention import HeadWeights, sparse_index_set
from cotlab.tensor import Tensor

__all__ = [
    "ModelConfig",
    "init_params",
    "positional_encoding",
    "transformer_forward",
    "sequence_loss",
    "heads_from_params",
    "param_shapes",
]

KINDS = ("standard", "sparse", "linear")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``dim`` is the embedding width D, ``heads`` the head count H; each head
    works in ceil(D/H) dimensions. For ``kind == "sparse"`` the pattern is
    controlled by ``block_size`` (B), ``window_blocks`` (k) and
    ``global_count`` (c), with 1 <= c <= B and k >= 1.
    """

    kind: str = "standard"
    depth: int = 3
    heads: int = 4
    dim: int = 64
    ffn_dim: int | None = None
    block_size: int = 8
    window_blocks: int = 1
    global_count: int = 1
    vocab_size: int = 32
    max_len: int = 512
    dropout: float = 0.0
    scale_scores: bool = False
    layer_norm: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.dim < self.heads:
            raise ValueError("embedding dim must be >= head count")
        if self.depth < 0 or self.heads < 1 or self.vocab_size < 2 or self.max_len < 1:
            raise ValueError("invalid config")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if self.kind == "sparse":
            if self.block_size < 1 or self.window_blocks < 1:
                raise ValueError("sparse pattern needs block_size >= 1 and window_blocks >= 1")
            if not (1 <= self.global_count <= self.block_size):
                raise ValueError("sparse pattern needs 1 <= global_count <= block_size")

    @property
    def head_dim(self) -> int:
        return -(-self.dim // self.heads)  # ceil(D/H)

    @property
    def ffn_hidden(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Named parameter tensors. Matrices are stored in right-multiply layout
    (``out = x @ W``); per-head blocks are adjacent columns of width
    head_dim."""
    hd = cfg.heads * cfg.head_dim
    shapes: dict[str, tuple[int, ...]] = {"embed": (cfg.vocab_size, cfg.dim)}
    for l in range(cfg.depth):
        shapes[f"l{l}.wq"] = (cfg.dim, hd)
        shapes[f"l{l}.wk"] = (cfg.dim, hd)
        shapes[f"l{l}.wv"] = (cfg.dim, hd)
        shapes[f"l{l}.wo"] = (hd, cfg.dim)
        shapes[f"l{l}.w1"] = (cfg.dim, cfg.ffn_hidden)
        shapes[f"l{l}.w2"] = (cfg.ffn_hidden, cfg.dim)
    shapes["head"] = (cfg.dim, cfg.vocab_size)
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    """Xavier-uniform initialization for every weight matrix."""
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        fan_in, fan_out = shape[0], shape[1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[name] = Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)
    return params


def positional_encoding(max_len: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal positions, interleaved sin/cos with base 10000.

    Row p (0-based offset for 1-based position p+1):
    pe[p, 2i] = sin(p / 10000^(2i/dim)), pe[p, 2i+1] = cos(same angle).
    """
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    idx = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, idx / dim)
    pe = np.zeros((max_len, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : pe[:, 1::2].shape[1]])
    return pe.astype(dtype)


_NEG = -1e9  # additive mask value; exp underflows to exactly 0 in both f32/f64

_mask_cache: dict[tuple, np.ndarray] = {}


def attention_mask(cfg: ModelConfig, length: int, dtype=np.float32) -> np.ndarray:
    """(L, L) mask for the batched forward. Additive 0/-1e9 for softmax
    kinds, multiplicative 0/1 for the linear kind. Row i may only see the
    positions its variant attends to, so causality is structural."""
    key = (cfg.kind, cfg.block_size, cfg.window_blocks, cfg.global_count, length, np.dtype(dtype).str)
    hit = _mask_cache.get(key)
    if hit is not None:
        return hit
    allowed = np.tril(np.ones((length, length), dtype=bool))
    if cfg.kind == "sparse":
        allowed = np.zeros((length, length), dtype=bool)
        for i in range(1, length + 1):
            allowed[i - 1, sparse_index_set(i, cfg.block_size, cfg.window_blocks, cfg.global_count) - 1] = True
    if cfg.kind == "linear":
        mask = allowed.astype(dtype)
    else:
        mask = np.where(allowed, 0.0, _NEG).astype(dtype)
    _mask_cache[key] = mask
    return mask


def _split_heads(x: Tensor, b: int, length: int, heads: int, hd: int) -> Tensor:
    return x.reshape(b, length, heads, hd).permute(0, 2, 1, 3).reshape(b * heads, length, hd)


def _merge_heads(x: Tensor, b: int, length: int, heads: int, hd: int) -> Tensor:
    return x.reshape(b, heads, length, hd).permute(0, 2, 1, 3).reshape(b * length, heads * hd)


def transformer_forward(
    tokens: np.ndarray,
    cfg: ModelConfig,
    params: dict[str, Tensor],
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Logits for every position of ``tokens`` ((B, L) or (L,) int array).

    Dropout is applied only when ``train`` is true (then ``rng`` is
    required). Returns a Tensor of shape (B, L, vocab).
    """
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    b, length = tokens.shape
    if length > cfg.max_len:
        raise ValueError(f"sequence length {length} exceeds max_len {cfg.max_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("token id outside vocabulary")
    if train and cfg.dropout > 0.0 and rng is None:
        raise ValueError("training with dropout needs an rng")

    dtype = params["embed"].dtype
    H, hd = cfg.heads, cfg.head_dim
    pe = positional_encoding(length, cfg.dim, dtype=dtype)
    x = T.embedding(params["embed"], tokens) + pe
    x = T.dropout(x, cfg.dropout, rng, train)
    mask = attention_mask(cfg, length, dtype=dtype)

    for l in range(cfg.depth):
        flat = x.reshape(b * length, cfg.dim)
        q = _split_heads(flat @ params[f"l{l}.wq"], b, length, H, hd)
        k = _split_heads(flat @ params[f"l{l}.wk"], b, length, H, hd)
        v = _split_heads(flat @ params[f"l{l}.wv"], b, length, H, hd)
        kt = k.permute(0, 2, 1)
        if cfg.kind == "linear":
            sims = T.mul(T.elu_plus_one(q) @ T.elu_plus_one(kt), mask)
            den = sims.sum(axis=-1, keepdims=True)
            att = T.div(sims @ v, den)
        else:
            scores = q @ kt
            if cfg.scale_scores:
                scores = scores * (1.0 / math.sqrt(hd))
            att = T.softmax_row(scores + mask) @ v
        att = _merge_heads(att, b, length, H, hd) @ params[f"l{l}.wo"]
        att = T.dropout(att.reshape(b, length, cfg.dim), cfg.dropout, rng, train)
        h = x + att
        hflat = h.reshape(b * length, cfg.dim)
        ffn = T.gelu(hflat @ params[f"l{l}.w1"]) @ params[f"l{l}.w2"]
        ffn = T.dropout(ffn.reshape(b, length, cfg.dim), cfg.dropout, rng, train)
        x = h + ffn
        if cfg.layer_norm:
            x = T.layernorm_row(x)

    logits = x.reshape(b * length, cfg.dim) @ params["head"]
    return logits.reshape(b, length, cfg.vocab_size)


def sequence_loss(
    tokens: np.ndarray,
    loss_mask: np.ndarray,
    cfg: ModelConfig,
    params: dict[str, Tensor],
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean next-token cross-entropy over positions where ``loss_mask`` is 1.

    ``loss_mask`` has the same shape as ``tokens`` and marks *target*
    positions that are scored (the generated segment: trace, answer, and the
    end marker). Position 0 can never be a target.
    """
    tokens = np.asarray(tokens)
    loss_mask = np.asarray(loss_mask)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
        loss_mask = loss_mask[None, :]
    logits = transformer_forward(tokens, cfg, params, train=train, rng=rng)
    b, length, vocab = logits.shape
    pred = logits.reshape(b * length, vocab)
    # prediction at position t scores target token at t+1; drop the last slot
    keep = np.ones((b, length), dtype=bool)
    keep[:, -1] = False
    targets = np.zeros((b, length), dtype=np.int64)
    targets[:, :-1] = tokens[:, 1:]
    tmask = np.zeros((b, length), dtype=np.float64)
    tmask[:, :-1] = loss_mask[:, 1:].astype(np.float64)
    tmask[~keep] = 0.0
    return T.masked_cross_entropy(pred, targets.reshape(-1), tmask.reshape(-1))


def heads_from_params(cfg: ModelConfig, params: dict[str, Tensor], layer: int) -> HeadWeights:
    """Per-head weight stacks (heads, head_dim, dim) for the single-position
    attention primitives and the incremental decoder."""
    H, hd = cfg.heads, cfg.head_dim

    def stack(name: str, transpose: bool) -> np.ndarray:
        w = params[f"l{layer}.{name}"].data
        if transpose:  # (dim, H*hd) -> (H, hd, dim)
            return np.ascontiguousarray(w.reshape(cfg.dim, H, hd).transpose(1, 2, 0))
        # wo is stored (H*hd, dim); per-head block rows -> (H, hd, dim)
        return np.ascontiguousarray(w.reshape(H, hd, cfg.dim))

    return HeadWeights(
        wq=stack("wq", True), wk=stack("wk", True), wv=stack("wv", True), wo=stack("wo", False)
    )
