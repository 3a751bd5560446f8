"""Model checkpoint format.

A checkpoint is a single ``.npz`` file (zip of little-endian ``.npy``
members, row-major) holding every named parameter tensor plus a JSON
``__meta__`` entry with the format version and the full model
configuration. The format is self-describing: shapes and dtypes live in the
``.npy`` headers.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from cotlab.model import ModelConfig, param_shapes
from cotlab.tensor import Tensor

__all__ = ["save_checkpoint", "load_checkpoint", "FORMAT_VERSION"]

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: dict[str, Tensor]) -> None:
    meta = {"format_version": FORMAT_VERSION, "config": cfg.to_dict()}
    arrays = {name: np.ascontiguousarray(p.data) for name, p in params.items()}
    np.savez(Path(path), __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, dict[str, Tensor]]:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {meta.get('format_version')}")
        cfg = ModelConfig.from_dict(meta["config"])
        expected = param_shapes(cfg)
        params: dict[str, Tensor] = {}
        for name, shape in expected.items():
            if name not in z:
                raise ValueError(f"checkpoint missing parameter {name!r}")
            arr = z[name]
            if tuple(arr.shape) != tuple(shape):
                raise ValueError(f"checkpoint parameter {name!r} has shape {arr.shape}, expected {shape}")
            params[name] = Tensor(arr, requires_grad=True)
    return cfg, params
