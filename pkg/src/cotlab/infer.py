"""Incremental (token-by-token) evaluation and greedy decoding.

This is the generation-time counterpart of the batched training forward:
softmax kinds keep per-layer key/value caches and attend over the exact
index set of each position; the linear kind carries the constant-size
recurrent state. A :class:`MacCounter` can be attached to count every
multiply-accumulate the engine performs, which the analytic FLOPs estimator
must reproduce exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cotlab.attention import LinearAttnState, sparse_index_set
from cotlab.funcs import elu_plus_one_np, gelu_np
from cotlab.model import ModelConfig, positional_encoding
from cotlab.tensor import Tensor

__all__ = ["MacCounter", "Decoder", "BatchedGreedy", "greedy_decode", "greedy_decode_batch", "process_sequence"]


class MacCounter:
    """Counts multiply-accumulate operations performed inside matmuls."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


def _as_np(params: dict[str, Tensor | np.ndarray]) -> dict[str, np.ndarray]:
    return {k: (v.data if isinstance(v, Tensor) else np.asarray(v)) for k, v in params.items()}


def _layernorm_np(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps)


def _softmax_last(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class Decoder:
    """Single-sequence incremental evaluator with optional MAC counting."""

    def __init__(self, cfg: ModelConfig, params: dict, counter: MacCounter | None = None):
        self.cfg = cfg
        self.p = _as_np(params)
        self.counter = counter
        self.pos = 0
        dtype = self.p["embed"].dtype
        self.pe = positional_encoding(cfg.max_len, cfg.dim, dtype=dtype)
        H, hd = cfg.heads, cfg.head_dim
        if cfg.kind == "linear":
            self.state = [LinearAttnState.zeros(H, hd, hd, dtype=dtype) for _ in range(cfg.depth)]
        else:
            self.kcache = [np.zeros((cfg.max_len, H, hd), dtype=dtype) for _ in range(cfg.depth)]
            self.vcache = [np.zeros((cfg.max_len, H, hd), dtype=dtype) for _ in range(cfg.depth)]

    def _mac(self, n: int) -> None:
        if self.counter is not None:
            self.counter.add(n)

    def step(self, token_id: int) -> np.ndarray:
        """Process one token; returns the logits predicting the next one."""
        cfg = self.cfg
        if self.pos >= cfg.max_len:
            raise ValueError("decoder ran past max_len")
        if not (0 <= token_id < cfg.vocab_size):
            raise ValueError("token id outside vocabulary")
        self.pos += 1
        i = self.pos
        H, hd, D = cfg.heads, cfg.head_dim, cfg.dim
        x = self.p["embed"][token_id] + self.pe[i - 1]
        for l in range(cfg.depth):
            q = (x @ self.p[f"l{l}.wq"]).reshape(H, hd)
            k = (x @ self.p[f"l{l}.wk"]).reshape(H, hd)
            v = (x @ self.p[f"l{l}.wv"]).reshape(H, hd)
            self._mac(3 * D * H * hd)
            if cfg.kind == "linear":
                st = self.state[l]
                pk = elu_plus_one_np(k)
                st.s += pk[:, :, None] * v[:, None, :]
                st.z += pk
                self._mac(H * hd * hd)
                pq = elu_plus_one_np(q)
                num = np.einsum("hf,hfd->hd", pq, st.s)
                den = np.einsum("hf,hf->h", pq, st.z)
                self._mac(H * hd * hd + H * hd)
                att = num / den[:, None]
            else:
                self.kcache[l][i - 1] = k
                self.vcache[l][i - 1] = v
                if cfg.kind == "sparse":
                    idx = sparse_index_set(i, cfg.block_size, cfg.window_blocks, cfg.global_count) - 1
                else:
                    idx = np.arange(i)
                ksub = self.kcache[l][idx]
                vsub = self.vcache[l][idx]
                scores = np.einsum("hd,nhd->hn", q, ksub)
                self._mac(H * len(idx) * hd)
                if cfg.scale_scores:
                    scores = scores / np.sqrt(hd)
                w = _softmax_last(scores)
                att = np.einsum("hn,nhd->hd", w, vsub)
                self._mac(H * len(idx) * hd)
            out = att.reshape(H * hd) @ self.p[f"l{l}.wo"]
            self._mac(H * hd * D)
            h = x + out
            pre = h @ self.p[f"l{l}.w1"]
            ffn = gelu_np(pre) @ self.p[f"l{l}.w2"]
            self._mac(D * cfg.ffn_hidden + cfg.ffn_hidden * D)
            x = h + ffn
            if cfg.layer_norm:
                x = _layernorm_np(x)
        logits = x @ self.p["head"]
        self._mac(D * cfg.vocab_size)
        return logits


def process_sequence(cfg: ModelConfig, params: dict, tokens, counter: MacCounter | None = None) -> np.ndarray:
    """Feed every token of a sequence through a fresh decoder; returns the
    logits at each position, shape (L, vocab)."""
    dec = Decoder(cfg, params, counter=counter)
    return np.stack([dec.step(int(t)) for t in np.asarray(tokens)])


@dataclass
class Generation:
    tokens: list[int]  # generated tokens only, including the final EOS if any
    truncated: bool


def greedy_decode(
    cfg: ModelConfig,
    params: dict,
    prompt: list[int] | np.ndarray,
    eos_id: int,
    max_len: int | None = None,
    counter: MacCounter | None = None,
) -> Generation:
    """Greedy continuation of ``prompt`` until EOS or the length cap.

    Ties in the argmax break toward the lowest token id. The stop condition
    applies to generated tokens only; EOS inside the prompt is not
    re-detected. Hitting the cap reports truncation, it is not an error.
    """
    prompt = [int(t) for t in np.asarray(prompt).reshape(-1)]
    if not prompt:
        raise ValueError("prompt must be nonempty")
    cap = cfg.max_len if max_len is None else min(max_len, cfg.max_len)
    if len(prompt) > cap:
        raise ValueError("prompt longer than the length cap")
    if len(prompt) == cap:
        return Generation([], truncated=True)  # no room to generate anything
    dec = Decoder(cfg, params, counter=counter)
    logits = None
    for t in prompt:
        logits = dec.step(t)
    out: list[int] = []
    total = len(prompt)
    while True:
        nxt = int(np.argmax(logits))  # first max = lowest token id
        out.append(nxt)
        total += 1
        if nxt == eos_id:
            return Generation(out, truncated=False)
        if total >= cap:
            return Generation(out, truncated=True)
        logits = dec.step(nxt)


class BatchedGreedy:
    """Row-parallel greedy decoding with ragged prompts.

    All live rows advance one position per step, so every row is always at
    the same position and the sparse index set is shared. Rows switch from
    consuming their prompt to consuming their own argmax as soon as the
    prompt is exhausted; a row retires on EOS or at the cap (truncated).
    """

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.p = _as_np(params)
        self.dtype = self.p["embed"].dtype
        self.pe = positional_encoding(cfg.max_len, cfg.dim, dtype=self.dtype)

    def run(self, prompts: list[list[int]], eos_id: int, max_len: int | None = None) -> list[Generation]:
        cfg = self.cfg
        cap = cfg.max_len if max_len is None else min(max_len, cfg.max_len)
        n = len(prompts)
        if n == 0:
            return []
        plens = np.array([len(p) for p in prompts])
        if plens.min() < 1:
            raise ValueError("prompts must be nonempty")
        if plens.max() > cap:
            raise ValueError("prompt longer than the length cap")
        H, hd, D = cfg.heads, cfg.head_dim, cfg.dim
        if cfg.kind == "linear":
            s_state = np.zeros((n, cfg.depth, H, hd, hd), dtype=self.dtype)
            z_state = np.zeros((n, cfg.depth, H, hd), dtype=self.dtype)
        else:
            kcache = np.zeros((n, cfg.depth, cfg.max_len, H, hd), dtype=self.dtype)
            vcache = np.zeros((n, cfg.depth, cfg.max_len, H, hd), dtype=self.dtype)
        tokens = [list(p) for p in prompts]
        generated: list[list[int]] = [[] for _ in range(n)]
        finished = plens >= cap  # no room to generate anything
        truncated = finished.copy()
        for i in range(1, cap):  # position cap-1 appends the cap-th token at most
            if finished.all():
                break
            # a row is steppable at position i when it has an i-th token
            active = np.array([r for r in range(n) if not finished[r] and len(tokens[r]) >= i], dtype=int)
            if active.size == 0:
                break
            inp = np.array([tokens[r][i - 1] for r in active])
            x = self.p["embed"][inp] + self.pe[i - 1]
            for l in range(cfg.depth):
                q = (x @ self.p[f"l{l}.wq"]).reshape(-1, H, hd)
                k = (x @ self.p[f"l{l}.wk"]).reshape(-1, H, hd)
                v = (x @ self.p[f"l{l}.wv"]).reshape(-1, H, hd)
                if cfg.kind == "linear":
                    pk = elu_plus_one_np(k)
                    s_state[active, l] += pk[:, :, :, None] * v[:, :, None, :]
                    z_state[active, l] += pk
                    pq = elu_plus_one_np(q)
                    num = np.einsum("ahf,ahfd->ahd", pq, s_state[active, l])
                    den = np.einsum("ahf,ahf->ah", pq, z_state[active, l])
                    att = num / den[:, :, None]
                else:
                    kcache[active, l, i - 1] = k
                    vcache[active, l, i - 1] = v
                    if cfg.kind == "sparse":
                        idx = sparse_index_set(i, cfg.block_size, cfg.window_blocks, cfg.global_count) - 1
                    else:
                        idx = np.arange(i)
                    ksub = kcache[np.ix_(active, [l], idx)][:, 0]
                    vsub = vcache[np.ix_(active, [l], idx)][:, 0]
                    scores = np.einsum("ahd,anhd->ahn", q, ksub)
                    if cfg.scale_scores:
                        scores = scores / np.sqrt(hd)
                    w = _softmax_last(scores)
                    att = np.einsum("ahn,anhd->ahd", w, vsub)
                out = att.reshape(-1, H * hd) @ self.p[f"l{l}.wo"]
                h = x + out
                ffn = gelu_np(h @ self.p[f"l{l}.w1"]) @ self.p[f"l{l}.w2"]
                x = h + ffn
                if cfg.layer_norm:
                    x = _layernorm_np(x)
            logits = x @ self.p["head"]
            nxt = np.argmax(logits, axis=-1)
            for pos_in_active, r in enumerate(active):
                if i < plens[r]:
                    continue  # still consuming the prompt; logits unused
                t = int(nxt[pos_in_active])
                tokens[r].append(t)
                generated[r].append(t)
                if t == eos_id:
                    finished[r] = True
                elif len(tokens[r]) >= cap:
                    finished[r] = True
                    truncated[r] = True
        for r in range(n):
            if not finished[r]:  # ran out of positions mid-prompt: cap hit
                truncated[r] = True
        return [Generation(generated[r], bool(truncated[r])) for r in range(n)]


def greedy_decode_batch(
    cfg: ModelConfig,
    params: dict,
    prompts: list[list[int]],
    eos_id: int,
    max_len: int | None = None,
) -> list[Generation]:
    return BatchedGreedy(cfg, params).run(prompts, eos_id, max_len=max_len)
