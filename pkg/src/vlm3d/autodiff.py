"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records the ops applied to it on a dynamic
tape; ``backward()`` on a scalar walks the tape in reverse topological
order and accumulates gradients into every reachable tensor that has
``requires_grad`` set. The op set is exactly what the models in this
package need: broadcast arithmetic, (batched) matmul, shape ops, gathers,
reductions, the usual nonlinearities, softmax/log-softmax, layer norm and
a numerically stable binary cross-entropy.

Gradients of broadcast ops are reduced back to the operand shape with
``_unbroadcast``. All ops preserve the dtype of their inputs, so a model
built in float64 stays float64 (the finite-difference tests rely on it).
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape construction inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):  # numpy scalar: keep its dtype
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    # ---- bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None):
        """Accumulate gradients of this (scalar) tensor w.r.t. the tape."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- arithmetic --------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add,
                       lambda g, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract,
                       lambda g, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return _binary(_wrap(other, self.dtype), self, np.subtract,
                       lambda g, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __mul__(self, other):
        return _binary(self, other, np.multiply,
                       lambda g, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return _wrap(other, self.dtype) * self ** -1.0

    def __neg__(self):
        return self * -1.0

    def __pow__(self, p: float):
        out_data = self.data ** p
        out = _result(out_data, (self,))
        if out._parents:
            x = self.data

            def bw(g, x=x, p=p):
                _acc(self, g * p * x ** (p - 1.0))
            out._backward = bw
        return out

    def __matmul__(self, other):
        other = _wrap(other, self.dtype)
        if self.ndim == 1:
            return (self.reshape(1, -1) @ other).reshape(-1)
        if other.ndim == 1:
            return (self @ other.reshape(-1, 1)).reshape(self.shape[:-1])
        out = _result(np.matmul(self.data, other.data), (self, other))
        if out._parents:
            a, b = self.data, other.data

            def bw(g):
                if self.requires_grad or self._parents:
                    _acc(self, _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape))
                if other.requires_grad or other._parents:
                    _acc(other, _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape))
            out._backward = bw
        return out

    # ---- shape ops ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _result(self.data.reshape(shape), (self,))
        if out._parents:
            orig = self.data.shape
            out._backward = lambda g: _acc(self, g.reshape(orig))
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        out = _result(np.ascontiguousarray(np.transpose(self.data, axes)), (self,))
        if out._parents:
            inv = np.argsort(axes)
            out._backward = lambda g: _acc(self, np.transpose(g, inv))
        return out

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    def __getitem__(self, idx):
        out = _result(self.data[idx], (self,))
        if out._parents:
            shape = self.data.shape
            dtype = self.data.dtype

            def bw(g):
                full = np.zeros(shape, dtype=dtype)
                np.add.at(full, idx, g)
                _acc(self, full)
            out._backward = bw
        return out

    # ---- reductions --------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = _result(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            shape = self.data.shape

            def bw(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                _acc(self, np.broadcast_to(g, shape).copy())
            out._backward = bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def max(self, axis: int, keepdims: bool = False):
        mx = self.data.max(axis=axis, keepdims=True)
        out_data = mx if keepdims else np.squeeze(mx, axis=axis)
        out = _result(out_data, (self,))
        if out._parents:
            mask = (self.data == mx)
            counts = mask.sum(axis=axis, keepdims=True)

            def bw(g):
                if not keepdims:
                    g = np.expand_dims(g, axis)
                _acc(self, mask * (g / counts))
            out._backward = bw
        return out

    # ---- elementwise -------------------------------------------------

    def exp(self):
        y = np.exp(self.data)
        out = _result(y, (self,))
        if out._parents:
            out._backward = lambda g: _acc(self, g * y)
        return out

    def log(self):
        out = _result(np.log(self.data), (self,))
        if out._parents:
            x = self.data
            out._backward = lambda g: _acc(self, g / x)
        return out

    def sqrt(self):
        return self ** 0.5

    def tanh(self):
        y = np.tanh(self.data)
        out = _result(y, (self,))
        if out._parents:
            out._backward = lambda g: _acc(self, g * (1.0 - y * y))
        return out

    def sigmoid(self):
        y = _sigmoid(self.data)
        out = _result(y, (self,))
        if out._parents:
            out._backward = lambda g: _acc(self, g * y * (1.0 - y))
        return out

    def relu(self):
        out = _result(np.maximum(self.data, 0), (self,))
        if out._parents:
            mask = self.data > 0
            out._backward = lambda g: _acc(self, g * mask)
        return out

    def gelu(self):
        """Gaussian error linear unit, sigmoid form: x * sigmoid(1.702 x)."""
        x = self.data
        s = _sigmoid(1.702 * x)
        out = _result(x * s, (self,))
        if out._parents:
            def bw(g):
                _acc(self, g * (s + x * 1.702 * s * (1.0 - s)))
            out._backward = bw
        return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out.requires_grad = False
    return out


def _acc(t: Tensor, g: np.ndarray):
    if t.requires_grad or t._parents:
        t.grad = g if t.grad is None else t.grad + g


def _binary(a, b, fwd, bwd):
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    b = _wrap(b, a.dtype)
    out = _result(fwd(a.data, b.data), (a, b))
    if out._parents:
        def backward(g):
            ga, gb = bwd(g, a.data, b.data)
            _acc(a, ga)
            _acc(b, gb)
        out._backward = backward
    return out


# ---- composite / fused primitives ------------------------------------


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def bw(g):
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _acc(t, g[tuple(sl)])
        out._backward = bw
    return out


def take_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2D table by an integer index array (embedding lookup)."""
    idx = np.asarray(idx)
    out = _result(table.data[idx], (table,))
    if out._parents:
        shape = table.data.shape
        dtype = table.data.dtype

        def bw(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, idx.reshape(-1), g.reshape(-1, shape[1]))
            _acc(table, full)
        out._backward = bw
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _result(y, (x,))
    if out._parents:
        def bw(g):
            _acc(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._backward = bw
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    out = _result(y, (x,))
    if out._parents:
        sm = np.exp(y)

        def bw(g):
            _acc(x, g - sm * g.sum(axis=axis, keepdims=True))
        out._backward = bw
    return out


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _result(xhat, (x,))
    if out._parents:
        def bw(g):
            gm = g.mean(axis=-1, keepdims=True)
            gx = (g * xhat).mean(axis=-1, keepdims=True)
            _acc(x, inv * (g - gm - xhat * gx))
        out._backward = bw
    return out


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy from logits, stable at large |logit|."""
    x = logits.data
    z = np.asarray(targets, dtype=x.dtype)
    loss = np.maximum(x, 0) - x * z + np.log1p(np.exp(-np.abs(x)))
    out = _result(np.asarray(loss.mean(), dtype=x.dtype), (logits,))
    if out._parents:
        n = x.size

        def bw(g):
            _acc(logits, g * (_sigmoid(x) - z) / n)
        out._backward = bw
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits``.

    ``logits`` is (N, V); ``targets`` is (N,) int. Fused gather keeps the
    tape small on long training sequences.
    """
    t = np.asarray(targets)
    lsm = log_softmax(logits, axis=-1)
    rows = np.arange(t.shape[0])
    picked = lsm[rows, t]
    return -picked.mean()
