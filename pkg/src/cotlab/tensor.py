"""Dense tensors with reverse-mode autodiff, sized for tiny transformers.

Tensors wrap row-major numpy buffers (float32 for training, float64 for
verification work). Every differentiable op records its parents and a
backward closure on the output tensor; ``Tensor.backward()`` walks the
recorded graph once in reverse topological order. Tensors are treated as
immutable values after creation and graphs are single-owner/single-threaded.

Non-finite values (NaN/Inf) are an error, not something to propagate: every
op output is checked and raises :class:`NonFiniteError` on the spot.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "NonFiniteError",
    "matmul",
    "gelu",
    "elu_plus_one",
    "softmax_row",
    "embedding",
    "dropout",
    "masked_cross_entropy",
    "set_strict_finite",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Finite checks are an invariant of the engine; the switch exists only so a
# caller who has just proven a region finite can skip the second pass.
_STRICT_FINITE = True


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


def set_strict_finite(enabled: bool) -> bool:
    """Toggle per-op finiteness checks; returns the previous setting."""
    global _STRICT_FINITE
    prev = _STRICT_FINITE
    _STRICT_FINITE = bool(enabled)
    return prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if _STRICT_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A dense numeric buffer plus optional gradient bookkeeping.

    ``data`` is always a numpy array; ``shape``/``dtype`` delegate to it.
    Gradients accumulate in ``grad`` (same shape, same dtype) during
    ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
        _op: str = "leaf",
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        _check_finite(arr, _op)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op!r})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- graph machinery ----------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Run reverse-mode accumulation from this (typically scalar) node.

        Visits each recorded node exactly once, in reverse topological order.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without explicit grad needs a scalar")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if pg is None:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, _scale(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return _scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def permute(self, *axes: int) -> "Tensor":
        return permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)


def _as_array(x, dtype) -> np.ndarray:
    return np.asarray(x, dtype=dtype)


def _needs_graph(*ts: "Tensor | object") -> bool:
    return any(isinstance(t, Tensor) and (t.requires_grad or t._parents) for t in ts)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(a, b, forward, back_a, back_b, name):
    a_t = a if isinstance(a, Tensor) else None
    b_t = b if isinstance(b, Tensor) else None
    dtype = (a_t or b_t).dtype
    a_d = a_t.data if a_t is not None else _as_array(a, dtype)
    b_d = b_t.data if b_t is not None else _as_array(b, dtype)
    out_d = forward(a_d, b_d)
    if not _needs_graph(a, b):
        return Tensor(out_d, _op=name)

    parents = tuple(t for t in (a_t, b_t) if t is not None)

    def backward(g: np.ndarray):
        out = []
        if a_t is not None:
            out.append((a_t, _unbroadcast(back_a(g, a_d, b_d), a_d.shape)))
        if b_t is not None:
            out.append((b_t, _unbroadcast(back_b(g, a_d, b_d), b_d.shape)))
        return out

    return Tensor(out_d, _parents=parents, _backward=backward, _op=name)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g, "add")


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a, b) -> Tensor:
    return _binary(
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
        "div",
    )


def _scale(a: Tensor, c: float) -> Tensor:
    out_d = a.data * c
    if not _needs_graph(a):
        return Tensor(out_d, _op="scale")
    return Tensor(out_d, _parents=(a,), _backward=lambda g: [(a, g * c)], _op="scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports 2-D x 2-D and stacked 3-D x 3-D with equal batch.

    C[i][j] = sum_k A[i][k] * B[k][j] on the trailing two axes.
    """
    a_d = a.data if isinstance(a, Tensor) else np.asarray(a)
    b_d = b.data if isinstance(b, Tensor) else np.asarray(b)
    if a_d.ndim not in (2, 3) or b_d.ndim not in (2, 3) or a_d.ndim != b_d.ndim:
        raise ValueError(f"matmul expects matching 2-D or 3-D operands, got {a_d.shape} @ {b_d.shape}")
    if a_d.shape[-1] != b_d.shape[-2] or (a_d.ndim == 3 and a_d.shape[0] != b_d.shape[0]):
        raise ValueError(f"matmul shape mismatch: {a_d.shape} @ {b_d.shape}")
    out_d = a_d @ b_d
    if not _needs_graph(a, b):
        return Tensor(out_d, _op="matmul")

    def swap(x: np.ndarray) -> np.ndarray:
        return x.swapaxes(-1, -2)

    parents = []
    a_t = a if isinstance(a, Tensor) else None
    b_t = b if isinstance(b, Tensor) else None
    if a_t is not None:
        parents.append(a_t)
    if b_t is not None:
        parents.append(b_t)

    def backward(g: np.ndarray):
        out = []
        if a_t is not None:
            out.append((a_t, g @ swap(b_d)))
        if b_t is not None:
            out.append((b_t, swap(a_d) @ g))
        return out

    return Tensor(out_d, _parents=tuple(parents), _backward=backward, _op="matmul")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out_d = a.data.reshape(shape)
    if not _needs_graph(a):
        return Tensor(out_d, _op="reshape")
    orig = a.data.shape
    return Tensor(out_d, _parents=(a,), _backward=lambda g: [(a, g.reshape(orig))], _op="reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    # contiguity matters: downstream matmuls hit BLAS fast paths
    out_d = np.ascontiguousarray(a.data.transpose(axes))
    if not _needs_graph(a):
        return Tensor(out_d, _op="permute")
    return Tensor(out_d, _parents=(a,), _backward=lambda g: [(a, g.transpose(inv))], _op="permute")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_d = a.data.sum(axis=axis, keepdims=keepdims)
    if not _needs_graph(a):
        return Tensor(out_d, _op="sum")
    shape = a.data.shape

    def backward(g: np.ndarray):
        if axis is None:
            return [(a, np.broadcast_to(g, shape).copy())]
        ax = axis if isinstance(axis, tuple) else (axis,)
        gk = g if keepdims else np.expand_dims(g, ax)
        return [(a, np.broadcast_to(gk, shape).copy())]

    return Tensor(out_d, _parents=(a,), _backward=backward, _op="sum")


def gelu(a: Tensor) -> Tensor:
    """Exact GeLU, x * Phi(x) with Phi the standard normal CDF (erf form)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_d = x * cdf
    if not _needs_graph(a):
        return Tensor(out_d, _op="gelu")

    def backward(g: np.ndarray):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return [(a, g * (cdf + x * pdf))]

    return Tensor(out_d, _parents=(a,), _backward=backward, _op="gelu")


def elu_plus_one(a: Tensor) -> Tensor:
    """Elementwise x+1 for x >= 0, exp(x) for x < 0; strictly positive."""
    x = a.data
    neg = x < 0
    expx = np.exp(np.where(neg, x, 0.0))
    out_d = np.where(neg, expx, x + 1.0)
    if not _needs_graph(a):
        return Tensor(out_d, _op="elu_plus_one")

    def backward(g: np.ndarray):
        return [(a, g * np.where(neg, expx, 1.0))]

    return Tensor(out_d, _parents=(a,), _backward=backward, _op="elu_plus_one")


def softmax_row(a: Tensor) -> Tensor:
    """Row softmax over the last axis, computed with max subtraction."""
    x = a.data
    if x.shape[-1] == 0:
        raise ValueError("softmax_row needs at least one entry per row")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_d = e / e.sum(axis=-1, keepdims=True)
    if not _needs_graph(a):
        return Tensor(out_d, _op="softmax_row")

    def backward(g: np.ndarray):
        dot = (g * out_d).sum(axis=-1, keepdims=True)
        return [(a, out_d * (g - dot))]

    return Tensor(out_d, _parents=(a,), _backward=backward, _op="softmax_row")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError("token id out of vocabulary range")
    out_d = table.data[ids]
    if not _needs_graph(table):
        return Tensor(out_d, _op="embedding")

    def backward(g: np.ndarray):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return [(table, dt)]

    return Tensor(out_d, _parents=(table,), _backward=backward, _op="embedding")


def dropout(a: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not train or rate <= 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.data.shape) < keep).astype(a.dtype) / keep
    out_d = a.data * mask
    if not _needs_graph(a):
        return Tensor(out_d, _op="dropout")
    return Tensor(out_d, _parents=(a,), _backward=lambda g: [(a, g * mask)], _op="dropout")


def layernorm_row(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out_d = xc * inv
    if not _needs_graph(a):
        return Tensor(out_d, _op="layernorm")

    def backward(g: np.ndarray):
        gy = g * inv
        gmean = gy.mean(axis=-1, keepdims=True)
        gproj = (g * out_d).mean(axis=-1, keepdims=True) * out_d * inv
        return [(a, gy - gmean - gproj)]

    return Tensor(out_d, _parents=(a,), _backward=backward, _op="layernorm")


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean next-token cross-entropy over positions with mask == 1.

    ``logits`` has shape (N, V); ``targets`` and ``mask`` have shape (N,).
    Masked-out positions contribute nothing to the value or the gradient.
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=logits.dtype)
    n = logits.data.shape[0]
    count = mask.sum()
    if count <= 0:
        raise ValueError("masked_cross_entropy needs at least one unmasked position")
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    picked = shifted[np.arange(n), targets]
    nll = (lse - picked) * mask
    out_d = np.asarray(nll.sum() / count, dtype=logits.dtype)
    if not _needs_graph(logits):
        return Tensor(out_d, _op="masked_cross_entropy")

    def backward(g: np.ndarray):
        p = np.exp(shifted - lse[:, None])
        p[np.arange(n), targets] -= 1.0
        p *= (mask / count)[:, None]
        return [(logits, p * g)]

    return Tensor(out_d, _parents=(logits,), _backward=backward, _op="masked_cross_entropy")
