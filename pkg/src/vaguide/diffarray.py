"""Minimal reverse-mode differentiable array engine.

Dense numpy-backed arrays with an implicit gradient tape built from parent
links. Forward values are plain numpy ops; every primitive carries an
analytic backward. Arrays are treated as immutable once created; a graph
belongs to one logical training thread.

64-bit arrays are used for gradient checking, 32-bit for training runs.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class DiffArray:
    """A dense array participating in a reverse-mode gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple = (),
        _backward: Callable | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64 if not isinstance(data, np.ndarray) else data.dtype)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward_fn = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"DiffArray(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    # -- convenience method forms ------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_diff(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def constant(x, dtype=None) -> DiffArray:
    a = np.asarray(x, dtype=dtype)
    return DiffArray(a)


def _result(data, parents, backward) -> DiffArray:
    req = any(p.requires_grad for p in parents)
    if not req:
        return DiffArray(data)
    return DiffArray(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a.data)):
            raise ValueError(f"{name}: non-finite input")


# -- arithmetic primitives --------------------------------------------------


def add(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _result(
        out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )


def mul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a, s: float) -> DiffArray:
    a = as_diff(a)
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def matmul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul: need >=2D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(out, (a, b), backward)


# -- structural primitives --------------------------------------------------


def concat(arrays: Sequence, axis: int = 0) -> DiffArray:
    arrs = [as_diff(a) for a in arrays]
    try:
        out = np.concatenate([a.data for a in arrs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[a.shape for a in arrs]}")
    sizes = [a.shape[axis] for a in arrs]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(arrs))
        )

    return _result(out, arrs, backward)


def split(a, sections, axis: int = 0) -> list[DiffArray]:
    """Split into equal sections (int) or at sizes (list of ints)."""
    a = as_diff(a)
    if isinstance(sections, int):
        if a.shape[axis] % sections:
            raise ShapeError(f"split: axis {axis} of {a.shape} not divisible by {sections}")
        sizes = [a.shape[axis] // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != a.shape[axis]:
            raise ShapeError(f"split: sizes {sizes} do not cover axis {axis} of {a.shape}")
    offsets = np.cumsum([0] + sizes)
    pieces = []
    for i in range(len(sizes)):
        lo, hi = offsets[i], offsets[i + 1]
        piece_data = np.take(a.data, range(lo, hi), axis=axis)

        def backward(g, lo=lo, hi=hi):
            full = np.zeros_like(a.data)
            sl = [slice(None)] * a.ndim
            sl[axis] = slice(lo, hi)
            full[tuple(sl)] = g
            return (full,)

        pieces.append(_result(piece_data, (a,), backward))
    return pieces


def transpose(a, axes: tuple | None = None) -> DiffArray:
    """Permute axes; default swaps the last two."""
    a = as_diff(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need >=2D, got {a.shape}")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> DiffArray:
    a = as_diff(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


# -- reductions -------------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy() / n,)

    return _result(out, (a,), backward)


# -- nonlinearities ---------------------------------------------------------


def relu(a) -> DiffArray:
    a = as_diff(a)
    return _result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0.0),))


def gelu(a) -> DiffArray:
    """Exact erf-based GELU."""
    a = as_diff(a)
    cdf = 0.5 * (1.0 + erf(a.data / _SQRT2))
    out = a.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data**2)
        return (g * (cdf + a.data * pdf),)

    return _result(out, (a,), backward)


def sigmoid(a) -> DiffArray:
    a = as_diff(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> DiffArray:
    a = as_diff(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out**2),))


def softmax(a) -> DiffArray:
    """Softmax over the last axis."""
    a = as_diff(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (a,), backward)


def layer_norm(x, weight, bias, eps: float = 1e-5) -> DiffArray:
    """Layer normalization over the last axis."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    x, weight, bias = as_diff(x), as_diff(weight), as_diff(bias)
    if weight.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(
            f"layer_norm: weight/bias {weight.shape}/{bias.shape} vs features {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * weight.data + bias.data

    def backward(g):
        d = x.shape[-1]
        dxhat = g * weight.data
        dx = (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        ) * inv
        axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result(out, (x, weight, bias), backward)


def embedding_lookup(table, indices) -> DiffArray:
    """Rows of a (V, d) table selected by an integer index array."""
    table = as_diff(table)
    idx = np.asarray(indices, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: index out of range for table {table.shape}")
    out = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(out, (table,), backward)


def smooth_l1(pred, target) -> DiffArray:
    """Elementwise Smooth-L1: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise."""
    pred, target = as_diff(pred), as_diff(target)
    _check_finite("smooth_l1", pred, target)
    if pred.shape != target.shape:
        raise ShapeError(f"smooth_l1: shapes {pred.shape} and {target.shape} differ")
    d = pred.data - target.data
    out = np.where(np.abs(d) < 1.0, 0.5 * d * d, np.abs(d) - 0.5)

    def backward(g):
        gd = g * np.clip(d, -1.0, 1.0)
        return gd, -gd

    return _result(out, (pred, target), backward)


# -- tape -------------------------------------------------------------------


def backward(loss: DiffArray) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo: list[DiffArray] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward_fn(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            pg = pg.astype(p.data.dtype, copy=False)
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- initializers -----------------------------------------------------------


def init_trunc_normal(shape, std: float, seed: int, dtype=np.float64) -> DiffArray:
    """Normal(0, std) samples rejected outside +/- 2 std; deterministic per seed."""
    if std <= 0:
        raise ValueError("std must be positive")
    rng = np.random.default_rng(seed)
    n = int(np.prod(shape)) if shape else 1
    out = np.empty(n, dtype=np.float64)
    filled = 0
    while filled < n:
        draw = rng.normal(0.0, std, size=max(n - filled, 16))
        keep = draw[np.abs(draw) <= 2.0 * std]
        take = min(len(keep), n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return DiffArray(out.reshape(shape).astype(dtype), requires_grad=True)
