"""Minimal reverse-mode automatic differentiation over numpy arrays.

A `Var` wraps a float64 ndarray and records the operations applied to it.
Calling `backward()` on a scalar `Var` propagates gradients to every
reachable `Var` created with `requires_grad=True`. Broadcasting follows
numpy semantics; gradients are summed back over broadcast axes.

Compute happens in float64 regardless of how parameters are stored, so
analytic gradients can be validated against central finite differences at
tight tolerances.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    # ---- graph construction helpers -------------------------------------

    @staticmethod
    def _lift(x) -> "Var":
        return x if isinstance(x, Var) else Var(x)

    def _needs_tape(self, *others):
        return (
            self.requires_grad
            or self._parents
            or any(o.requires_grad or o._parents for o in others)
        )

    # ---- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = Var._lift(other)
        out_data = self.data + other.data

        def bw(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        return Var(out_data, parents=(self, other), backward=bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = Var._lift(other)
        out_data = self.data - other.data

        def bw(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape))

        return Var(out_data, parents=(self, other), backward=bw)

    def __rsub__(self, other):
        return Var._lift(other).__sub__(self)

    def __neg__(self):
        return Var(-self.data, parents=(self,), backward=lambda g: (-g,))

    def __mul__(self, other):
        other = Var._lift(other)
        out_data = self.data * other.data
        a, b = self, other

        def bw(g):
            return (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            )

        return Var(out_data, parents=(a, b), backward=bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Var._lift(other)
        a, b = self, other
        out_data = a.data / b.data

        def bw(g):
            return (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data ** 2), b.shape),
            )

        return Var(out_data, parents=(a, b), backward=bw)

    def __rtruediv__(self, other):
        return Var._lift(other).__truediv__(self)

    def __pow__(self, p):
        assert isinstance(p, (int, float))
        out_data = self.data ** p

        def bw(g):
            return (g * p * self.data ** (p - 1),)

        return Var(out_data, parents=(self,), backward=bw)

    def __matmul__(self, other):
        # 2D @ 2D only; keeps the backward rule trivial
        other = Var._lift(other)
        a, b = self, other
        assert a.data.ndim == 2 and b.data.ndim == 2
        out_data = a.data @ b.data

        def bw(g):
            return (g @ b.data.T, a.data.T @ g)

        return Var(out_data, parents=(a, b), backward=bw)

    # ---- elementwise nonlinearities -------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        return Var(out_data, parents=(self,), backward=lambda g: (g * out_data,))

    def log(self):
        return Var(np.log(self.data), parents=(self,), backward=lambda g: (g / self.data,))

    def tanh(self):
        out_data = np.tanh(self.data)
        return Var(out_data, parents=(self,), backward=lambda g: (g * (1.0 - out_data ** 2),))

    def relu(self):
        mask = self.data > 0
        return Var(self.data * mask, parents=(self,), backward=lambda g: (g * mask,))

    def abs(self):
        sign = np.sign(self.data)
        return Var(np.abs(self.data), parents=(self,), backward=lambda g: (g * sign,))

    def clip(self, lo: float, hi: float):
        """Hard clip; gradient is zero outside [lo, hi]."""
        mask = (self.data >= lo) & (self.data <= hi)
        return Var(np.clip(self.data, lo, hi), parents=(self,), backward=lambda g: (g * mask,))

    # ---- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def bw(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Var(out_data, parents=(self,), backward=bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ---- structure -------------------------------------------------------

    def __getitem__(self, idx):
        out_data = self.data[idx]
        shape = self.shape

        def bw(g):
            full = np.zeros(shape)
            full[idx] = g
            return (full,)

        return Var(out_data, parents=(self,), backward=bw)

    def reshape(self, *shape):
        orig = self.shape
        return Var(
            self.data.reshape(*shape),
            parents=(self,),
            backward=lambda g: (g.reshape(orig),),
        )

    def detach(self):
        return Var(self.data.copy())

    # ---- graph execution -------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo, seen = [], set()

        def visit(v):
            if id(v) in seen:
                return
            seen.add(id(v))
            for p in v._parents:
                visit(p)
            topo.append(v)

        visit(self)
        grads = {id(self): np.ones_like(self.data)}
        for v in reversed(topo):
            g = grads.pop(id(v), None)
            if g is None or v._backward is None:
                if g is not None and v.requires_grad:
                    v.grad = g if v.grad is None else v.grad + g
                continue
            if v.requires_grad:
                v.grad = g if v.grad is None else v.grad + g
            for p, pg in zip(v._parents, v._backward(g)):
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg


def maximum(a: Var, b) -> Var:
    b = Var._lift(b)
    mask = a.data >= b.data
    out_data = np.where(mask, a.data, b.data)

    def bw(g):
        return (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape))

    return Var(out_data, parents=(a, b), backward=bw)


def minimum(a: Var, b) -> Var:
    b = Var._lift(b)
    mask = a.data <= b.data
    out_data = np.where(mask, a.data, b.data)

    def bw(g):
        return (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape))

    return Var(out_data, parents=(a, b), backward=bw)


def concat(vars_, axis=-1) -> Var:
    vars_ = [Var._lift(v) for v in vars_]
    out_data = np.concatenate([v.data for v in vars_], axis=axis)
    sizes = [v.data.shape[axis] for v in vars_]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Var(out_data, parents=tuple(vars_), backward=bw)


def logsumexp(x: Var, axis=-1, keepdims=False) -> Var:
    """Numerically stable log-sum-exp along `axis`."""
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x - Var(m)
    out = shifted.exp().sum(axis=axis, keepdims=True).log() + Var(m)
    if not keepdims:
        out = out.reshape(*np.squeeze(out.data, axis=axis).shape)
    return out
