"""Minimal reverse-mode automatic differentiation on dense float64 tensors.

The operator set is deliberately small: matrix product, row-wise softmax,
elementwise add/mul, exp, scalar scaling, full sum, and flat-index gather.
Together with index computations done outside the graph (argsorts, cutoff
masks) these suffice to express superpixel uppooling, single-head
self-attention, error-adaptive convolution, and the mining loss.

All arithmetic is float64; gradient checks at 1e-4 tolerance are not
reliable in single precision.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "DiffTensor",
    "matmul",
    "softmax_rows",
    "elem_mul",
    "elem_add",
    "exp",
    "scale",
    "sum",
    "gather",
    "backward",
    "grad_check",
]


class DiffTensor:
    """One node of a computation graph: values plus an adjoint buffer.

    Shape is fixed at creation. ``grad`` starts at zero and is only written
    by :func:`backward`, which adds into it; repeated backward passes
    therefore accumulate. Leaf tensors are built directly from array data,
    interior nodes by the operator functions in this module.
    """

    __slots__ = ("values", "grad", "_parents", "_bwd")

    def __init__(self, values, _parents=(), _bwd=None):
        v = np.array(values, dtype=np.float64, copy=True) if _bwd is None else values
        self.values = v
        self.grad = np.zeros_like(v)
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def __repr__(self) -> str:
        return f"DiffTensor(shape={self.values.shape})"


def _node(values: np.ndarray, parents, bwd) -> DiffTensor:
    return DiffTensor(np.asarray(values, dtype=np.float64), _parents=tuple(parents), _bwd=bwd)


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Matrix product of a 2-D ``a`` (m, k) with a 2-D ``b`` (k, n)."""
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bwd(g):
        return (g @ b.values.T, a.values.T @ g)

    return _node(a.values @ b.values, (a, b), bwd)


def softmax_rows(a: DiffTensor) -> DiffTensor:
    """Row-wise softmax of a 2-D tensor (numerically stabilised)."""
    if a.values.ndim != 2:
        raise ValueError(f"softmax_rows needs a 2-D operand, got {a.shape}")
    out = a.values - a.values.max(axis=1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (a,), bwd)


def _check_elementwise(a: DiffTensor, b: DiffTensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.values.size == 1 or b.values.size == 1:
        return
    raise ValueError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def _reduce_to(contrib: np.ndarray, shape: tuple) -> np.ndarray:
    # Undo a size-1 broadcast by summing every axis.
    if contrib.shape == shape:
        return contrib
    return np.asarray(contrib.sum(), dtype=np.float64).reshape(shape)


def elem_mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Elementwise product; one operand may be a single-element tensor."""
    _check_elementwise(a, b, "elem_mul")

    def bwd(g):
        return (_reduce_to(g * b.values, a.shape), _reduce_to(g * a.values, b.shape))

    return _node(a.values * b.values, (a, b), bwd)


def elem_add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Elementwise sum; one operand may be a single-element tensor."""
    _check_elementwise(a, b, "elem_add")

    def bwd(g):
        return (_reduce_to(g, a.shape), _reduce_to(g, b.shape))

    return _node(a.values + b.values, (a, b), bwd)


def exp(a: DiffTensor) -> DiffTensor:
    """Elementwise exponential."""
    out = np.exp(a.values)

    def bwd(g):
        return (g * out,)

    return _node(out, (a,), bwd)


def scale(a: DiffTensor, s: float) -> DiffTensor:
    """Multiply every entry by the constant ``s`` (not differentiated in s)."""
    s = float(s)

    def bwd(g):
        return (g * s,)

    return _node(a.values * s, (a,), bwd)


def sum(a: DiffTensor) -> DiffTensor:
    """Sum of all entries, as a scalar (shape ``()``) tensor."""

    def bwd(g):
        return (np.full(a.shape, float(g), dtype=np.float64),)

    return _node(np.asarray(a.values.sum(), dtype=np.float64), (a,), bwd)


def gather(a: DiffTensor, indices) -> DiffTensor:
    """Select entries of ``a`` by flat index; output takes the index shape.

    The backward pass scatter-adds each upstream gradient into its source
    slot, so duplicated indices accumulate.
    """
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise ValueError(f"gather indices must be integers, got dtype {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.values.size):
        raise IndexError(
            f"gather index out of range for tensor of size {a.values.size}: "
            f"[{idx.min()}, {idx.max()}]"
        )
    idx = idx.astype(np.intp)
    flat = a.values.reshape(-1)

    def bwd(g):
        contrib = np.bincount(idx.reshape(-1), weights=g.reshape(-1), minlength=a.values.size)
        return (contrib.reshape(a.shape),)

    return _node(flat[idx], (a,), bwd)


def _toposort(root: DiffTensor) -> list:
    order = []
    seen = set()
    stack = [(root, False)]
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
    return order  # ancestors before descendants


def backward(loss: DiffTensor) -> None:
    """Accumulate d(loss)/d(node) into ``grad`` for every reachable node.

    Traversal order is fixed by the graph structure, so gradients are
    bit-stable across runs. Adjoints are propagated through pass-local
    buffers and only added to each node's persistent ``grad`` at the end,
    which makes repeated calls accumulate cleanly.
    """
    if loss.values.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.values.shape}")
    order = _toposort(loss)
    adj = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        if node._bwd is None:
            continue
        for parent, contrib in zip(node._parents, node._bwd(g)):
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + contrib
            else:
                adj[key] = contrib


def grad_check(f: Callable[[DiffTensor], DiffTensor], x, eps: float) -> float:
    """Compare the analytic gradient of ``f`` at ``x`` to central differences.

    ``f`` must map a tensor to a scalar tensor and build a fresh graph from
    its argument on every call. Returns the maximum over coordinates of
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.asarray(x, dtype=np.float64)
    leaf = DiffTensor(x0)
    backward(f(leaf))
    analytic = leaf.grad.reshape(-1)

    numeric = np.empty(x0.size, dtype=np.float64)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        fp = float(f(DiffTensor(bumped.reshape(x0.shape))).values)
        bumped[i] = flat[i] - eps
        fm = float(f(DiffTensor(bumped.reshape(x0.shape))).values)
        numeric[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
