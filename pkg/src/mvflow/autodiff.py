"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float32/float64 ndarray and records the operations that
produced it.  Calling ``backward()`` on a scalar result walks the graph in
reverse topological order and accumulates gradients into every node with
``requires_grad=True``.  There is no external framework: every operation used
inside a training loss is defined here (or in :mod:`mvflow.conv` /
:mod:`mvflow.nn`) together with its adjoint, and all of them are verified
against the central-difference oracle in :mod:`mvflow.gradcheck`.

Checked mode (on by default) traps NaN/Inf at tensor creation, so a numerical
blow-up fails at the op that produced it instead of ten layers later.
"""

from __future__ import annotations

import contextlib

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_checked = True
_grad_enabled = True


def set_checked(flag: bool) -> None:
    """Globally enable/disable NaN/Inf trapping at tensor creation."""
    global _checked
    _checked = bool(flag)


def checked_mode() -> bool:
    return _checked


@contextlib.contextmanager
def unchecked():
    """Temporarily disable finite-value checks (benchmark/training hot path)."""
    global _checked
    prev = _checked
    _checked = False
    try:
        yield
    finally:
        _checked = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (sampling / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class NonFiniteError(FloatingPointError):
    """Raised in checked mode when an operation produces NaN or Inf."""


def _check(arr: np.ndarray, name=None):
    if _checked and arr.dtype in _FLOAT_DTYPES and not np.all(np.isfinite(arr)):
        label = f" in tensor '{name}'" if name else ""
        raise NonFiniteError(f"non-finite value{label}")


class Tensor:
    """Array value plus optional gradient tape node."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        _check(arr, name)

    # -- introspection -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph -------------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate gradients of this (normally scalar) value into leaves."""
        if grad is None:
            grad = np.ones_like(self.data)
        order = _toposort(self)
        _accumulate(self, np.asarray(grad, dtype=self.dtype))
        for node in reversed(order):
            if node._backward is None:
                continue
            node._backward(node.grad)
            node.grad = None  # free intermediate gradients; leaves keep theirs

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return add(self, -_np_of(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / _np_of(other))

    def __rtruediv__(self, other):
        return div(_const_like(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _np_of(x):
    return np.asarray(x)


def _const_like(x, ref: Tensor) -> Tensor:
    return Tensor(np.asarray(x, dtype=ref.dtype))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def _toposort(root: Tensor):
    order, seen = [], set()
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
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g.dtype != t.dtype else g
        if t.grad.dtype != t.dtype:
            t.grad = t.grad.astype(t.dtype)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def make_op(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op result; attaches the tape node only when grad is needed."""
    track = _grad_enabled and any(p.requires_grad or p._parents for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype) if not isinstance(b, Tensor) else b
    data = a.data + b.data

    def backward(g):
        if a.requires_grad or a._parents:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, _unbroadcast(g, b.shape))

    return make_op(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype) if not isinstance(b, Tensor) else b
    data = a.data * b.data

    def backward(g):
        if a.requires_grad or a._parents:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return make_op(data, (a, b), backward)


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype) if not isinstance(b, Tensor) else b
    data = a.data / b.data

    def backward(g):
        if a.requires_grad or a._parents:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return make_op(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return make_op(-a.data, (a,), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    data = a.data ** exponent

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return make_op(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad or a._parents:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad or b._parents:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.shape))

    return make_op(data, (a, b), backward)


# -- shape ops ----------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return make_op(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inv))

    return make_op(a.data.transpose(axes), (a,), backward)


def take(a: Tensor, idx) -> Tensor:
    """Indexing with gradient scatter-add (handles repeated fancy indices)."""

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        _accumulate(a, ga)

    return make_op(a.data[idx], (a,), backward)


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad or t._parents:
                _accumulate(t, piece)

    return make_op(data, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concatenate(expanded, axis=axis)


# -- reductions ---------------------------------------------------------------

def _restore_axes(g, axis, keepdims, shape):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        _accumulate(a, _restore_axes(g, axis, keepdims, a.shape).astype(a.dtype, copy=False))

    return make_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod(
        [a.shape[ax % a.ndim] for ax in ((axis,) if isinstance(axis, int) else axis)]
    )
    inv = 1.0 / float(count)

    def backward(g):
        _accumulate(a, (_restore_axes(g, axis, keepdims, a.shape) * inv).astype(a.dtype, copy=False))

    return make_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


# -- elementwise nonlinearities ------------------------------------------------

def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return make_op(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g / a.data)

    return make_op(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * (0.5 / data))

    return make_op(data, (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid(a.data)

    def backward(g):
        _accumulate(a, g * data * (1.0 - data))

    return make_op(data, (a,), backward)


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    data = a.data * s

    def backward(g):
        _accumulate(a, g * (s * (1.0 + a.data * (1.0 - s))))

    return make_op(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return make_op(data, (a,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        di = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        _accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * di))

    return make_op(data, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, (g - dot) * data)

    return make_op(data, (a,), backward)
