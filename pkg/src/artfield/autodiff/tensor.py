"""Reverse-mode automatic differentiation over dense numpy arrays.

Every operation on a :class:`Tensor` that has at least one input requiring a
gradient records a node (its parents plus a closure mapping the output
gradient to input gradients).  Node ids come from a global counter, so
creation order is a valid topological order and :func:`backward` walks the
reachable nodes in decreasing id order.  Operations whose inputs are all
constants record nothing and behave like plain numpy calls, which is how the
forward-only paths (ray tracing, rendering) reuse the same network code.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward", "_id")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_ids)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def item(self) -> float:
        return float(self.value.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> Tensor:
        return Tensor(self.value)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result; record it only when some parent needs a gradient."""
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise binary ---------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def backward(g):
        ga = _unbroadcast(g * bv, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(av * bv, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv

    def backward(g):
        ga = _unbroadcast(g / bv, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bv, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(av ** exponent, (a,), lambda g: (g * exponent * av ** (exponent - 1),))


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any leading batch shape."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if bv.ndim != 2:
        raise ValueError(f"matmul expects a 2-D right operand, got shape {bv.shape}")

    def backward(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if av.ndim == 1:
                gb = np.outer(av, g)
            else:
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(av @ bv, (a, b), backward)


# -- elementwise unary ----------------------------------------------------
def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # exp of a non-positive argument only; no overflow warnings
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(a.value)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def _softplus_np(x: np.ndarray, beta: float) -> np.ndarray:
    u = beta * x
    out = np.log1p(np.exp(-np.abs(u)))
    out += np.maximum(u, 0.0)
    if beta != 1.0:
        out /= beta
    return out


def softplus_inplace(x: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """``_softplus_np`` overwriting ``x``; saves temporaries on forward-only paths."""
    if beta != 1.0:
        x *= beta
    e = np.abs(x)
    np.negative(e, out=e)
    np.exp(e, out=e)
    np.log1p(e, out=e)
    np.maximum(x, 0.0, out=x)
    x += e
    if beta != 1.0:
        x *= 1.0 / beta
    return x


def softplus(a, beta: float = 1.0) -> Tensor:
    """``log(1 + exp(beta * x)) / beta``; derivative ``sigmoid(beta * x)``."""
    a = as_tensor(a)
    av = a.value
    return _make(_softplus_np(av, beta), (a,), lambda g: (g * _sigmoid_np(beta * av),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0.0),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.abs(av), (a,), lambda g: (g * np.sign(av),))


# -- reductions and shape ops ---------------------------------------------
def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    def backward_basic(g):
        out = np.zeros(shape)
        out[index] = g
        return (out,)

    return _make(a.value[index], (a,), backward_basic if _is_basic(index) else backward)


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    value = np.concatenate([t.value for t in ts], axis=axis)
    ax = axis % value.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=ax) if t.requires_grad else None
            for k, t in enumerate(ts)
        )

    return _make(value, ts, backward)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(np.broadcast_to(a.value, shape), (a,), lambda g: (_unbroadcast(g, old),))


def norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    return sqrt(tsum(a * a, axis=axis, keepdims=keepdims))


def detach(a) -> Tensor:
    return as_tensor(a).detach()


# -- backward pass --------------------------------------------------------
def backward(root: Tensor, leaves: Sequence[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Propagate d(root)/d(node) to every reachable node.

    ``root`` must be a scalar.  Leaf gradients are stored on ``leaf.grad``
    (accumulated if already set) and returned keyed by leaf.
    """
    if root.value.size != 1:
        raise ValueError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen.add(node._id)
        order.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    order.sort(key=lambda t: t._id, reverse=True)

    grads: dict[int, np.ndarray] = {root._id: np.ones_like(root.value)}
    found: dict[Tensor, np.ndarray] = {}
    for node in order:
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            found[node] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent._id)
            grads[parent._id] = pg if prev is None else prev + pg
    if leaves is not None:
        return {leaf: found.get(leaf, np.zeros_like(leaf.value)) for leaf in leaves}
    return found
