"""Tape-based reverse-mode differentiation over numpy arrays.

Only the primitives the solvers need are provided: affine maps, relu, tanh,
softplus, exp, elementwise arithmetic with broadcasting, mean/sum/variance
reductions and the positive part.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)


class Var:
    """A node on the tape: a value plus the recipe to push gradients to parents."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    # -- graph plumbing -------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order, seen = [], set()
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
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                grads = node._backward(node.grad)
                for p, g in zip(node._parents, grads):
                    if g is None:
                        continue
                    p.grad = g if p.grad is None else p.grad + g

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        a, b = self.shape, other.shape
        return Var(self.data + other.data, (self, other),
                   lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        other = _lift(other)
        a, b = self.shape, other.shape
        x, y = self.data, other.data
        return Var(x * y, (self, other),
                   lambda g: (_unbroadcast(g * y, a), _unbroadcast(g * x, b)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        a, b = self.shape, other.shape
        x, y = self.data, other.data
        return Var(x / y, (self, other),
                   lambda g: (_unbroadcast(g / y, a), _unbroadcast(-g * x / (y * y), b)))

    def __matmul__(self, other):
        other = _lift(other)
        x, w = self.data, other.data
        return Var(x @ w, (self, other), lambda g: (g @ w.T, x.T @ g))

    @property
    def T(self):
        return Var(self.data.T, (self,), lambda g: (g.T,))

    # -- elementwise ----------------------------------------------------------

    def relu(self):
        mask = self.data > 0
        return Var(self.data * mask, (self,), lambda g: (g * mask,))

    def tanh(self):
        t = np.tanh(self.data)
        return Var(t, (self,), lambda g: (g * (1.0 - t * t),))

    def softplus(self):
        x = self.data
        return Var(softplus(x), (self,), lambda g: (g * _sigmoid(x),))

    def exp(self):
        e = np.exp(self.data)
        return Var(e, (self,), lambda g: (g * e,))

    def pos(self):
        """Positive part; subgradient 0 at the kink."""
        mask = self.data > 0
        return Var(self.data * mask, (self,), lambda g: (g * mask,))

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Var(out, (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def var(self, axis=None):
        """Population variance (divides by the sample count)."""
        centred = self - self.mean(axis=axis, keepdims=True)
        return (centred * centred).mean(axis=axis)


def _lift(x):
    return x if isinstance(x, Var) else Var(x)


def const(x):
    return Var(x)
