"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` wraps one numpy array and remembers how it was
produced.  Calling :meth:`Tensor.backward` on a result walks the
recorded graph in reverse topological order and accumulates gradients
into every reachable tensor with ``requires_grad`` set.  Activations
follow the (batch, channels, height, width) layout; parameter tensors
may use any rank.

Two element types are supported, float32 for training and float64 for
verification work.  Operands of a binary op must share one dtype; the
module never promotes silently.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError

_ALLOWED = (np.dtype(np.float32), np.dtype(np.float64))

# Optional finite-value check after every op, for debugging exploding runs.
_DEBUG_FINITE = False


def set_debug_finite(enabled: bool) -> None:
    """Toggle a NaN/Inf assertion on every op output (slow, off by default)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


def _check(data: np.ndarray) -> np.ndarray:
    if data.dtype not in _ALLOWED:
        raise ConfigurationError(
            f"unsupported dtype {data.dtype}; use float32 or float64")
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in op output")
    return data


class Tensor:
    """A numpy array plus gradient bookkeeping.

    The wrapped array must be treated as immutable once the tensor has
    been used by an op; backward closures capture it by reference.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED:
            # Integers and python scalars land in float64; training code
            # passes float32 arrays explicitly.
            arr = arr.astype(np.float64)
        self.data = _check(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- shape sugar ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Same data, no history."""
        return Tensor(self.data, requires_grad=False)

    def numpy(self) -> np.ndarray:
        """The underlying array (a view, not a copy)."""
        return self.data

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf.

        ``grad`` seeds the walk; it defaults to ones, which for a scalar
        output is the usual convention.  Gradients add up across calls
        until :meth:`zero_grad`.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ConfigurationError(
                    f"seed gradient shape {grad.shape} does not match output {self.data.shape}")

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

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def abs(self):
        return absolute(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes=axes, keepdims=keepdims)

    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes=axes, keepdims=keepdims)


def as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def _coerce_pair(a, b):
    """Lift scalars to the partner's dtype; reject mixed array dtypes."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if a.dtype != b.dtype:
        raise ConfigurationError(
            f"mixed dtypes {a.dtype} and {b.dtype}; cast explicitly")
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ConfigurationError(
            f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _make(data, parents, backward):
    # The backward closure receives the output gradient as its argument and
    # must capture only parent tensors and plain arrays, never the output
    # tensor itself: a self-reference would cycle through _backward and keep
    # every batch graph alive until the cycle collector ran.
    req = any(p.requires_grad for p in parents)
    out = Tensor(_check(data), requires_grad=req)
    if req:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    # Undo scalar broadcast: a 0-d operand collects the full sum.
    if shape == ():
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def _backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.shape))

    return _make(a.data + b.data, (a, b), _backward)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def _backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b.shape))

    return _make(a.data - b.data, (a, b), _backward)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def _backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), _backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def _backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _make(-a.data, (a,), _backward)


def absolute(a) -> Tensor:
    """|x| with subgradient 0 at x == 0."""
    a = as_tensor(a)

    def _backward(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), _backward)


def relu(a) -> Tensor:
    """max(x, 0) with subgradient 0 at x == 0."""
    a = as_tensor(a)

    def _backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _make(np.maximum(a.data, 0), (a,), _backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp always sees a non-positive argument, so neither tail overflows.
    pos = x >= 0
    ex = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def sigmoid(a) -> Tensor:
    """Logistic function, overflow-safe on both tails."""
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def _backward(g):
        if a.requires_grad:
            a._accumulate(g * (s * (1.0 - s)))

    return _make(s, (a,), _backward)


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(ax % ndim for ax in axes))


def reduce_mean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]

    def _backward(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(g, a.shape) / np.asarray(count, dtype=a.dtype))

    return _make(a.data.mean(axis=axes, keepdims=keepdims), (a,), _backward)


def reduce_sum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)

    def _backward(g):
        if a.requires_grad:
            if not keepdims:
                g = np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), _backward)


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate along one axis; gradients split back by the same cuts."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ConfigurationError("concat of zero tensors")
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ConfigurationError(f"mixed dtypes {dt} and {t.dtype} in concat")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), _backward)
