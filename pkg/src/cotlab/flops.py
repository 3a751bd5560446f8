"""Analytic FLOPs accounting for one full autoregressive pass.

The estimate counts the cost of processing positions 1..L through the
incremental decoder (embedding lookups are free; every matrix product is
counted in multiply-accumulates). It must agree *exactly*, MAC for MAC,
with an instrumented decoder run -- that equality is tested.

Conventions (fixed so reports are reproducible):

* 1 multiply-add = 2 FLOPs,
* exponentials and divisions count 1 FLOP each; the FFN nonlinearity is
  counted as 1 FLOP per evaluated element,
* plain additions without a paired multiply (residuals, positional
  encodings) are not counted,
* the optional post-block normalization is excluded from accounting (it is
  off in every reported configuration).

Component split: ``attn_macs`` covers score/value work (for the linear kind:
state update and readout), ``proj_macs`` covers the Q/K/V/O projections and
the final vocabulary projection, ``ffn_macs`` the feed-forward products.
"""

from __future__ import annotations

from dataclasses import dataclass

from cotlab.attention import sparse_index_set
from cotlab.model import ModelConfig

__all__ = ["FlopsEstimate", "flops_estimate"]


@dataclass
class FlopsEstimate:
    attn_macs: int
    proj_macs: int
    ffn_macs: int
    nonmac_flops: int

    @property
    def total_macs(self) -> int:
        return self.attn_macs + self.proj_macs + self.ffn_macs

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs + self.nonmac_flops

    @property
    def attn_flops(self) -> int:
        return 2 * self.attn_macs

    def to_dict(self) -> dict:
        return {
            "attn_macs": self.attn_macs,
            "proj_macs": self.proj_macs,
            "ffn_macs": self.ffn_macs,
            "nonmac_flops": self.nonmac_flops,
            "total_macs": self.total_macs,
            "total_flops": self.total_flops,
        }


def flops_estimate(cfg: ModelConfig, length: int) -> FlopsEstimate:
    """Exact multiply-accumulate counts for generating ``length`` tokens."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if length > cfg.max_len:
        raise ValueError("length exceeds max_len")
    H, hd, D, F, V, M = cfg.heads, cfg.head_dim, cfg.dim, cfg.ffn_hidden, cfg.vocab_size, cfg.depth

    if cfg.kind == "standard":
        ctx_total = length * (length + 1) // 2
    elif cfg.kind == "sparse":
        ctx_total = sum(
            len(sparse_index_set(i, cfg.block_size, cfg.window_blocks, cfg.global_count))
            for i in range(1, length + 1)
        )
    else:
        ctx_total = 0

    if cfg.kind == "linear":
        attn = M * length * (2 * H * hd * hd + H * hd)
        nonmac_attn = M * length * (2 * H * hd + H * hd)  # two feature maps + readout divisions
    else:
        attn = M * 2 * H * hd * ctx_total
        nonmac_attn = M * 2 * H * ctx_total  # softmax exps + normalizing divisions

    proj = M * length * (3 * D * H * hd + H * hd * D) + length * D * V
    ffn = M * length * 2 * D * F
    nonmac = nonmac_attn + M * length * F  # FFN nonlinearity evaluations
    return FlopsEstimate(attn_macs=attn, proj_macs=proj, ffn_macs=ffn, nonmac_flops=nonmac)
