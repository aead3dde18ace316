"""Tape-free reverse-mode differentiation over numpy arrays.

Every :class:`Tensor` produced by an op keeps references to its parents and a
closure that pushes its output gradient back to them.  ``backward`` walks the
graph in reverse topological order.  Functions in this module accept plain
floats / ndarrays too, in which case they fall through to numpy so the same
model code serves both the fast path and the differentiable path.
"""
from __future__ import annotations

import numpy as np


class OpCounter:
    """Counts forward op constructions and backward closure calls."""

    active: "OpCounter | None" = None

    def __init__(self):
        self.forward = 0
        self.backward = 0

    def __enter__(self):
        self._prev = OpCounter.active
        OpCounter.active = self
        return self

    def __exit__(self, *exc):
        OpCounter.active = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100.0
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        if _parents and OpCounter.active is not None:
            OpCounter.active.forward += 1

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        counter = OpCounter.active
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            if counter is not None:
                counter.backward += 1
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- operators -------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # comparisons act on values only; they never carry gradient
    def __lt__(self, other):
        return self.data < value(other)

    def __le__(self, other):
        return self.data <= value(other)

    def __gt__(self, other):
        return self.data > value(other)

    def __ge__(self, other):
        return self.data >= value(other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def value(x):
    """Underlying ndarray/float of a possibly-differentiable quantity."""
    return x.data if isinstance(x, Tensor) else x


def is_tensor(x):
    return isinstance(x, Tensor)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, parents, backward, op):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None, op)


# -- elementwise binary -----------------------------------------------------

def add(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.add(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.subtract(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.multiply(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.divide(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "div")


def power(a, p):
    """``a ** p`` for a constant exponent."""
    if not is_tensor(a):
        return np.power(a, p)
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def maximum(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.maximum(a, b)
    return where(value(a) >= value(b), a, b)


def minimum(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.minimum(a, b)
    return where(value(a) <= value(b), a, b)


def where(cond, a, b, grad_cond=None):
    """Select ``a`` where ``cond`` else ``b``.

    ``grad_cond`` lets the gradient routing differ from the value selection,
    which is how a one-sided subgradient is chosen at a branch point.
    """
    cond = np.asarray(cond, dtype=bool)
    if not (is_tensor(a) or is_tensor(b)):
        return np.where(cond, a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    gc = cond if grad_cond is None else np.asarray(grad_cond, dtype=bool)
    return _node(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(gc, g, 0.0), a.shape),
                            _unbroadcast(np.where(gc, 0.0, g), b.shape)), "where")


def clip(x, lo, hi):
    if not is_tensor(x):
        return np.clip(x, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


# -- elementwise unary ------------------------------------------------------

def _unary(x, f, df, op):
    if not is_tensor(x):
        return f(x)
    out = f(x.data)
    return _node(out, (x,), lambda g: (g * df(x.data, out),), op)


def exp(x):
    return _unary(x, np.exp, lambda v, o: o, "exp")


def expm1(x):
    return _unary(x, np.expm1, lambda v, o: o + 1.0, "expm1")


def log(x):
    return _unary(x, np.log, lambda v, o: 1.0 / v, "log")


def sqrt(x):
    return _unary(x, np.sqrt, lambda v, o: 0.5 / o, "sqrt")


def sin(x):
    return _unary(x, np.sin, lambda v, o: np.cos(v), "sin")


def cos(x):
    return _unary(x, np.cos, lambda v, o: -np.sin(v), "cos")


def arcsin(x):
    return _unary(x, np.arcsin, lambda v, o: 1.0 / np.sqrt(1.0 - v * v), "arcsin")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x):
    return _unary(x, _sigmoid, lambda v, o: o * (1.0 - o), "sigmoid")


def relu(x):
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda v, o: (v > 0.0).astype(np.float64), "relu")


# -- shape / reduction ------------------------------------------------------

def tsum(x, axis=None):
    if not is_tensor(x):
        return np.sum(x, axis=axis)
    shape = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(np.sum(x.data, axis=axis), (x,), back, "sum")


def mean(x, axis=None):
    if not is_tensor(x):
        return np.mean(x, axis=axis)
    n = x.data.size if axis is None else x.data.shape[axis]
    return tsum(x, axis) * (1.0 / n)


def reshape(x, shape):
    if not is_tensor(x):
        return np.reshape(x, shape)
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def getitem(x, idx):
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(x.data[idx], (x,), back, "getitem")


def concat(xs, axis=-1):
    if not any(is_tensor(x) for x in xs):
        return np.concatenate(xs, axis=axis)
    xs = [_as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _node(np.concatenate([x.data for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(xs, axis=0):
    if not any(is_tensor(x) for x in xs):
        return np.stack(xs, axis=axis)
    xs = [_as_tensor(x) for x in xs]
    n = len(xs)
    return _node(np.stack([x.data for x in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


def matmul(a, b):
    if not (is_tensor(a) or is_tensor(b)):
        return np.matmul(a, b)
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 1 and b.ndim == 1:
        return _node(a.data @ b.data, (a, b), lambda g: (g * b.data, g * a.data), "dot")
    if a.ndim == 2 and b.ndim == 1:
        return _node(a.data @ b.data, (a, b), lambda g: (np.outer(g, b.data), g @ a.data), "matvec")
    if a.ndim == 1 and b.ndim == 2:
        return _node(a.data @ b.data, (a, b), lambda g: (b.data @ g, np.outer(a.data, g)), "vecmat")
    if b.ndim != 2:
        raise ValueError("matmul supports (..., k) @ (k, m), matrix-vector and vector dot products")

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _node(a.data @ b.data, (a, b), back, "matmul")
