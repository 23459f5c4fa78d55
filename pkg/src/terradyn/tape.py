"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tape`` records every produced ``Tensor`` in creation order; ``backward``
walks the list in reverse, accumulating vector-Jacobian products.  Operands
that are plain ndarrays or scalars are treated as constants and add no nodes,
so mixing recorded and unrecorded inputs is free.

The op set is exactly what the rollout kernel in :mod:`terradyn.stepmath`
needs: arithmetic, sqrt, sigmoid, relu, clip to [0, 1], flat gather, and a
points-axis sum.  Forward values are computed with the same numpy calls as the
plain backend, so recorded primals bit-match unrecorded ones.
"""

from __future__ import annotations

import numpy as np

from .errors import TapeOverflowError
from .stepmath import NumpyOps

DEFAULT_NODE_BUDGET = 20_000_000


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tape:
    """Ordered record of tensor nodes; parents always precede children."""

    def __init__(self, node_budget: int = DEFAULT_NODE_BUDGET):
        self.nodes: list[Tensor] = []
        self.node_budget = node_budget

    def _register(self, t: "Tensor"):
        if len(self.nodes) >= self.node_budget:
            raise TapeOverflowError(
                f"tape exceeded node budget of {self.node_budget}")
        t.index = len(self.nodes)
        self.nodes.append(t)

    def leaf(self, value) -> "Tensor":
        return Tensor(self, np.asarray(value, dtype=np.float64))

    def backward(self, seeds) -> None:
        """Accumulate gradients from (tensor, seed) pairs into ``.grad``.

        ``seeds`` may be a single tensor (seed 1.0) or a list of pairs.  The
        reverse sweep is a fixed-order loop, so repeated calls on the same
        tape are bit-identical.
        """
        if isinstance(seeds, Tensor):
            seeds = [(seeds, np.ones_like(seeds.value))]
        for node in self.nodes:
            node.grad = None
        for t, g in seeds:
            g = np.broadcast_to(np.asarray(g, dtype=np.float64), t.value.shape)
            t.grad = t.grad + g if t.grad is not None else g.copy()
        for node in reversed(self.nodes):
            if node.grad is None or not node.parents:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                contrib = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = contrib.copy() if contrib.base is not None else contrib
                else:
                    parent.grad = parent.grad + contrib


class Tensor:
    """A recorded array value with its local backward rules."""

    __slots__ = ("tape", "value", "parents", "vjps", "grad", "index")

    # keep ndarray.__mul__ etc. from consuming us; python then falls back to
    # our reflected operators
    __array_ufunc__ = None

    def __init__(self, tape: Tape, value: np.ndarray, parents=(), vjps=()):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.grad = None
        tape._register(self)

    @property
    def shape(self):
        return self.value.shape

    # -- helpers ---------------------------------------------------------

    def _make(self, value, parents, vjps):
        return Tensor(self.tape, value, parents, vjps)

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return self._make(self.value + other.value, (self, other),
                              (lambda g: _unbroadcast(g, self.value.shape),
                               lambda g: _unbroadcast(g, other.value.shape)))
        return self._make(self.value + other, (self,),
                          (lambda g: _unbroadcast(g, self.value.shape),))

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.value, (self,), (lambda g: -g,))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self._make(self.value - other.value, (self, other),
                              (lambda g: _unbroadcast(g, self.value.shape),
                               lambda g: _unbroadcast(-g, other.value.shape)))
        return self._make(self.value - other, (self,),
                          (lambda g: _unbroadcast(g, self.value.shape),))

    def __rsub__(self, other):
        return self._make(other - self.value, (self,),
                          (lambda g: _unbroadcast(-g, self.value.shape),))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return self._make(self.value * other.value, (self, other),
                              (lambda g: _unbroadcast(g * other.value, self.value.shape),
                               lambda g: _unbroadcast(g * self.value, other.value.shape)))
        return self._make(self.value * other, (self,),
                          (lambda g: _unbroadcast(g * other, self.value.shape),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            out = self.value / other.value
            return self._make(out, (self, other),
                              (lambda g: _unbroadcast(g / other.value, self.value.shape),
                               lambda g: _unbroadcast(-g * out / other.value,
                                                      other.value.shape)))
        return self._make(self.value / other, (self,),
                          (lambda g: _unbroadcast(g / other, self.value.shape),))

    def __rtruediv__(self, other):
        out = other / self.value
        return self._make(out, (self,),
                          (lambda g: _unbroadcast(-g * out / self.value,
                                                  self.value.shape),))

    def __pow__(self, p):
        return self._make(self.value ** p, (self,),
                          (lambda g: g * p * self.value ** (p - 1),))


class TapeOps:
    """Ops facade over one Tape, compatible with stepmath's numpy facade."""

    def __init__(self, tape: Tape):
        self.tape = tape

    @staticmethod
    def value(x):
        return x.value if isinstance(x, Tensor) else np.asarray(x)

    def _lift(self, x):
        return x if isinstance(x, Tensor) else None

    def sqrt(self, x):
        if not isinstance(x, Tensor):
            return np.sqrt(x)
        out = np.sqrt(x.value)
        return x._make(out, (x,), (lambda g: g * (0.5 / out),))

    def sigmoid(self, x):
        if not isinstance(x, Tensor):
            return NumpyOps.sigmoid(x)
        out = NumpyOps.sigmoid(x.value)
        return x._make(out, (x,), (lambda g: g * out * (1.0 - out),))

    def relu(self, x):
        if not isinstance(x, Tensor):
            return np.maximum(x, 0.0)
        mask = x.value > 0
        return x._make(np.maximum(x.value, 0.0), (x,), (lambda g: g * mask,))

    def clip01(self, x):
        if not isinstance(x, Tensor):
            return np.clip(x, 0.0, 1.0)
        inside = (x.value > 0.0) & (x.value < 1.0)
        return x._make(np.clip(x.value, 0.0, 1.0), (x,), (lambda g: g * inside,))

    def take(self, flat, idx):
        if not isinstance(flat, Tensor):
            return np.take(flat, idx)

        def vjp(g, idx=idx, n=flat.value.shape[0]):
            out = np.zeros(n, dtype=np.float64)
            np.add.at(out, idx.ravel(), g.ravel())
            return out

        return flat._make(np.take(flat.value, idx), (flat,), (vjp,))

    def sum_points(self, x):
        if not isinstance(x, Tensor):
            return np.sum(x, axis=-1, keepdims=True)
        shape = x.value.shape
        return x._make(np.sum(x.value, axis=-1, keepdims=True), (x,),
                       (lambda g: np.broadcast_to(g, shape),))
