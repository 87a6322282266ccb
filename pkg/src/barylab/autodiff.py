"""A small reverse-mode autodiff over numpy arrays.

Each :class:`Var` remembers its parents and a closure that maps the output
gradient to parent gradients.  ``backward`` walks the graph in reverse
topological order.  Only the operations needed by the barycenter losses are
provided.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
        if self.value.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {self.value.shape}")
        order = _topo(self)
        grads = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topo(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def const(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def leaf(x) -> Var:
    return Var(x, requires_grad=True)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _node(value, parents, backward):
    rg = any(p.requires_grad for p in parents)
    return Var(value, rg, parents if rg else (), backward if rg else None)


def add(a, b):
    a, b = const(a), const(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = const(a), const(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = const(a), const(b)
    av, bv = a.value, b.value

    def back(g):
        return (
            _unbroadcast(g * bv, av.shape) if a.requires_grad else None,
            _unbroadcast(g * av, bv.shape) if b.requires_grad else None,
        )

    return _node(av * bv, (a, b), back)


def div(a, b):
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    out = av / bv

    def back(g):
        return (
            _unbroadcast(g / bv, av.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bv, bv.shape) if b.requires_grad else None,
        )

    return _node(out, (a, b), back)


def matmul(a, b):
    """Matrix product of 2-d operands; either side may also be a 1-d vector."""
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError("matmul supports 1-d and 2-d operands only")

    def back(g):
        # promote vectors to matrices, then drop the added axes again
        A = av[None, :] if av.ndim == 1 else av
        B = bv[:, None] if bv.ndim == 1 else bv
        G = g.reshape(A.shape[0], B.shape[1])
        ga = (G @ B.T).reshape(av.shape) if a.requires_grad else None
        gb = (A.T @ G).reshape(bv.shape) if b.requires_grad else None
        return ga, gb

    return _node(av @ bv, (a, b), back)


def transpose(a):
    return _node(a.value.T, (a,), lambda g: (g.T,))


def vsum(a, axis=None, keepdims=False):
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None):
    n = a.value.size if axis is None else a.shape[axis]
    return vsum(a, axis=axis) * (1.0 / n)


def square(a):
    av = a.value
    return _node(av * av, (a,), lambda g: (2.0 * av * g,))


def exp(a):
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    av = a.value
    return _node(np.log(av), (a,), lambda g: (g / av,))


def log1p(a):
    av = a.value
    return _node(np.log1p(av), (a,), lambda g: (g / (1.0 + av),))


def tanh(a):
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def row_norm(a):
    """Euclidean norm of each row; the subgradient at a zero row is taken as 0."""
    av = a.value
    n = np.sqrt((av * av).sum(axis=1))
    safe = np.where(n > 0, n, 1.0)

    def back(g):
        return ((g / safe * (n > 0))[:, None] * av,)

    return _node(n, (a,), back)


def normalize_rows(a):
    """Project rows to the unit sphere; zero rows stay zero (and get zero gradient)."""
    av = a.value
    n = np.sqrt((av * av).sum(axis=1, keepdims=True))
    nz = n > 0
    safe = np.where(nz, n, 1.0)
    u = av / safe

    def back(g):
        # d(u)/d(a) = (I - u u^T) / |a|
        proj = g - u * (g * u).sum(axis=1, keepdims=True)
        return (np.where(nz, proj / safe, 0.0),)

    return _node(u, (a,), back)


def take_rows(a, idx):
    idx = np.asarray(idx)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), back)
