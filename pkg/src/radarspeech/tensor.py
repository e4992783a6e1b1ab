"""Reverse-mode automatic differentiation on dense numpy arrays.

Tensors are row-major and dtype-preserving: float64 graphs for gradient
checking, float32 for training.  Every op validates that its output is
finite and raises rather than letting NaN/Inf propagate.

backward() runs over a per-invocation gradient table and only then adds
into each node's persistent .grad, so calling it twice without zeroing
doubles every gradient exactly (the accumulation contract).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_grad_enabled = True


class no_grad:
    """Context manager: ops inside build no graph (inference fast path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _ensure_finite(data: np.ndarray, op: str):
    if not np.isfinite(data).all():
        raise FloatingPointError("non-finite values produced by %s" % op)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        _ensure_finite(self.data, "Tensor")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    @classmethod
    def _from_op(cls, data, parents, backward_fn, op: str) -> "Tensor":
        _ensure_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(p for p in parents if p.requires_grad) if track else ()
        out._backward_fn = backward_fn if track else None
        return out

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return "Tensor(shape=%r, requires_grad=%r)" % (self.shape, self.requires_grad)

    def zero_grad(self):
        self.grad = None

    # -- autograd driver ----------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        table: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}

        def accumulate(parent: Tensor, contrib: np.ndarray):
            key = id(parent)
            prev = table.get(key)
            table[key] = contrib if prev is None else prev + contrib

        for node in reversed(topo):
            g = table.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is not None:
                node._backward_fn(g, accumulate)
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g

    # -- elementwise arithmetic ----------------------------------------------
    def __add__(self, other):
        a, b = self, _as_tensor(other, self.data.dtype)
        data = a.data + b.data

        def bwd(g, acc):
            acc(a, _unbroadcast(g, a.shape))
            acc(b, _unbroadcast(g, b.shape))

        return Tensor._from_op(data, (a, b), bwd, "add")

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._from_op(-a.data, (a,), lambda g, acc: acc(a, -g), "neg")

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.data.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.data.dtype) + (-self)

    def __mul__(self, other):
        a, b = self, _as_tensor(other, self.data.dtype)
        data = a.data * b.data

        def bwd(g, acc):
            acc(a, _unbroadcast(g * b.data, a.shape))
            acc(b, _unbroadcast(g * a.data, b.shape))

        return Tensor._from_op(data, (a, b), bwd, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _as_tensor(other, self.data.dtype)
        with np.errstate(divide="ignore", invalid="ignore"):
            data = a.data / b.data

        def bwd(g, acc):
            acc(a, _unbroadcast(g / b.data, a.shape))
            acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._from_op(data, (a, b), bwd, "div")

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents supported")
        a, e = self, float(exponent)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            data = a.data**e

        def bwd(g, acc):
            acc(a, g * e * a.data ** (e - 1.0))

        return Tensor._from_op(data, (a,), bwd, "pow")

    def abs(self):
        a = self
        return Tensor._from_op(np.abs(a.data), (a,), lambda g, acc: acc(a, g * np.sign(a.data)), "abs")

    # -- activations ----------------------------------------------------------
    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._from_op(a.data * mask, (a,), lambda g, acc: acc(a, g * mask), "relu")

    def gelu(self):
        a = self
        x = a.data
        cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
        data = x * cdf

        def bwd(g, acc):
            pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
            acc(a, g * (cdf + x * pdf))

        return Tensor._from_op(data, (a,), bwd, "gelu")

    def softmax(self, axis: int = -1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)

        def bwd(g, acc):
            dot = (g * y).sum(axis=axis, keepdims=True)
            acc(a, y * (g - dot))

        return Tensor._from_op(y, (a,), bwd, "softmax")

    # -- shape ops --------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)
        return Tensor._from_op(data, (a,), lambda g, acc: acc(a, g.reshape(a.shape)), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = tuple(np.argsort(axes))
        data = a.data.transpose(axes)
        return Tensor._from_op(data, (a,), lambda g, acc: acc(a, g.transpose(inv)), "transpose")

    # -- reductions ----------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g, acc):
            acc(a, _spread(g, a.shape, axis, keepdims))

        return Tensor._from_op(np.asarray(data), (a,), bwd, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        count = a.data.size if axis is None else np.prod([a.shape[i] for i in _axes(axis, a.ndim)])
        data = a.data.mean(axis=axis, keepdims=keepdims)

        def bwd(g, acc):
            acc(a, _spread(g, a.shape, axis, keepdims) / count)

        return Tensor._from_op(np.asarray(data), (a,), bwd, "mean")

    # -- linear algebra ----------------------------------------------------------
    def __matmul__(self, other):
        a, b = self, _as_tensor(other, self.data.dtype)
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("matmul requires rank >= 2 operands")
        data = a.data @ b.data

        def bwd(g, acc):
            ga = g @ b.data.swapaxes(-1, -2)
            gb = a.data.swapaxes(-1, -2) @ g
            acc(a, _unbroadcast(ga, a.shape))
            acc(b, _unbroadcast(gb, b.shape))

        return Tensor._from_op(data, (a, b), bwd, "matmul")


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def _spread(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduction gradient back to the un-reduced shape."""
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape).copy() if shape else np.asarray(g)
    if not keepdims:
        for ax in sorted(_axes(axis, len(shape))):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along an existing axis; gradient splits back."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of nothing")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, acc):
        sl = [slice(None)] * g.ndim
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl[axis] = slice(start, stop)
            acc(t, g[tuple(sl)])

    return Tensor._from_op(data, tuple(tensors), bwd, "concat")
