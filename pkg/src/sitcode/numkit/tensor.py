"""Dense tensors with a reverse-mode gradient tape.

Every op returns a new :class:`Tensor`; when gradients are enabled and an
input requires them, the result remembers its parents and a closure that
maps the output gradient to one gradient per parent.  :func:`backward`
walks that graph in reverse topological order and accumulates into the
``grad`` slot of leaf tensors.
"""
from __future__ import annotations

import os
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import kernels

DEBUG = bool(os.environ.get("SITCODE_DEBUG"))

_state = threading.local()


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(map(str, shapes))}")
        self.shapes = shapes


class MaskAllForbidden(ValueError):
    def __init__(self, row):
        super().__init__(f"attention row {row} has no allowed position")
        self.row = row


class NotScalar(ValueError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], fn: Callable) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by a forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(k for k, s in enumerate(shape) if s == 1 and g.shape[k] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _make(np.where(on, a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * on,))


# -- shape ----------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _make(data, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def transpose_last_two(a: Tensor) -> Tensor:
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def concat_last_dim(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    lead = parts[0].shape[:-1]
    if any(p.shape[:-1] != lead for p in parts):
        raise ShapeError("concat_last_dim", *(p.shape for p in parts))
    bounds = np.cumsum([p.shape[-1] for p in parts])[:-1]
    return _make(
        np.concatenate([p.data for p in parts], axis=-1),
        tuple(parts),
        lambda g: tuple(np.split(g, bounds, axis=-1)),
    )


# -- reductions ----------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


# -- linear algebra ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched ``a @ b`` over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(data, (a, b), fn)


# -- attention / normalization ------------------------------------------

def _as4d(shape: tuple[int, ...]) -> tuple[int, ...]:
    return (1,) * (4 - len(shape)) + tuple(shape)


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis, optionally restricted to ``mask``.

    ``mask`` is boolean (True = allowed) with the shape of ``x`` or a shape
    that broadcasts to it along the leading (batch/head) axes.  Forbidden
    entries are exactly zero in the output.
    """
    if not 2 <= x.ndim <= 4:
        raise ShapeError("softmax_rows", x.shape)
    shape4 = _as4d(x.shape)
    xd = np.ascontiguousarray(x.data).reshape(shape4)
    if mask is None:
        allowed = np.ones((1, 1) + shape4[2:], dtype=np.uint8)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.ndim > 4 or m.shape[-2:] != x.shape[-2:]:
            raise ShapeError("softmax_rows", x.shape, m.shape)
        m4 = m.reshape(_as4d(m.shape))
        if any(ms not in (1, xs) for ms, xs in zip(m4.shape[:2], shape4[:2])):
            raise ShapeError("softmax_rows", x.shape, m.shape)
        empty = ~m4.any(axis=-1)
        if empty.any():
            raise MaskAllForbidden(tuple(int(i) for i in np.argwhere(empty)[0]))
        allowed = m4.view(np.uint8)
    y = kernels.masked_softmax_fwd(xd, allowed)

    def fn(g):
        g4 = np.ascontiguousarray(g, dtype=y.dtype).reshape(shape4)
        return (kernels.masked_softmax_bwd(y, g4).reshape(x.shape),)

    return _make(y.reshape(x.shape), (x,), fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    x2 = np.ascontiguousarray(x.data).reshape(-1, d)
    y, xhat, rstd = kernels.layer_norm_fwd(x2, gain.data, bias.data, eps)

    def fn(g):
        g2 = np.ascontiguousarray(g, dtype=x2.dtype).reshape(-1, d)
        dx, dgain, dbias = kernels.layer_norm_bwd(g2, xhat, rstd, gain.data)
        return dx.reshape(x.shape), dgain, dbias

    return _make(y.reshape(x.shape), (x, gain, bias), fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.dtype)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def embedding_lookup(ids, table: Tensor) -> Tensor:
    ids = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError("embedding_lookup", ids.shape, table.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"id out of range for table with {table.shape[0]} rows")

    def fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(table.data[ids], (table,), fn)


def gather_last(x: Tensor, idx) -> Tensor:
    """``out[..., i, j] = x[..., i, idx[i, j]]`` for ``x`` (..., I, R) and ``idx`` (I, J)."""
    idx = np.asarray(idx, dtype=np.intp)
    rows, r = x.shape[-2:]
    if idx.ndim != 2 or idx.shape[0] != rows:
        raise ShapeError("gather_last", x.shape, idx.shape)
    cols = idx.shape[1]
    out = x.data[..., np.arange(rows)[:, None], idx]

    def fn(g):
        lead = int(np.prod(x.shape[:-2], dtype=np.int64))
        flat = (np.arange(rows)[:, None] * r + idx).reshape(-1)
        full = (np.arange(lead)[:, None] * (rows * r) + flat[None, :]).reshape(-1)
        gx = np.bincount(full, weights=g.reshape(-1), minlength=lead * rows * r)
        return (gx.reshape(x.shape).astype(x.dtype, copy=False),)

    return _make(out, (x,), fn)


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean token cross-entropy of ``logits`` (N, V) against integer ``targets`` (N,).

    ``weights`` (N,) of 0/1 excludes positions (padding) from both the sum
    and the normalizer.
    """
    targets = np.asarray(targets, dtype=np.intp)
    n, v = logits.shape
    if targets.shape != (n,):
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    denom = max(float(w.sum()), 1.0)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    nll = logz - z[np.arange(n), targets]
    loss = np.asarray((nll * w).sum() / denom, dtype=logits.dtype)

    def fn(g):
        p = np.exp(z - logz[:, None])
        p[np.arange(n), targets] -= 1.0
        return ((p * (w[:, None] * (float(g) / denom))).astype(logits.dtype, copy=False),)

    return _make(loss, (logits,), fn)
