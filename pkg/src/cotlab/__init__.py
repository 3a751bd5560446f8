"""cotlab: a small laboratory for autoregressive attention variants on
chain-of-thought dynamic-programming tasks.

The package contains:

* a minimal dense-tensor reverse-mode autodiff engine sized for tiny
  transformers (``cotlab.tensor``, ``cotlab.optim``, ``cotlab.gradcheck``),
* three autoregressive architectures -- full softmax attention, block-sparse
  attention, and kernelized (linear-time) attention -- with analytic FLOPs
  accounting (``cotlab.attention``, ``cotlab.model``, ``cotlab.infer``,
  ``cotlab.flops``),
* generators with brute-force oracles for four DP tasks emitting
  chain-of-thought traces (``cotlab.tasks``),
* explicit-weight MLP/attention gadgets with numeric verification of their
  error bounds (``cotlab.constructions``),
* a training/evaluation/sweep harness (``cotlab.harness``) and a CLI
  (``cotlab.cli``).
"""

__version__ = "0.1.0"

from cotlab.tensor import Tensor  # noqa: F401
from cotlab.model import ModelConfig  # noqa: F401
