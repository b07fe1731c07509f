"""Reverse-mode autodiff over dense numpy arrays.

Every operation records a closure that routes the output gradient back to
its operands; `backward` walks the recorded graph in reverse topological
order. Float64 throughout. Inside `no_grad()` the same numpy math runs but
no graph is recorded, so train and eval forwards are numerically identical.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

_GRAD_STACK = [True]


def grad_enabled() -> bool:
    return _GRAD_STACK[-1]


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        _GRAD_STACK.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_STACK.pop()
        return False


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum g over axes that were broadcast to reach its shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._parents: Tuple["Tensor", ...] = ()

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            self.grad += g

    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise ValueError("backward requires a tensor with a recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward on a non-scalar needs an explicit gradient")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ValueError("gradient shape does not match tensor shape")

        # Iterative post-order walk; recursion would overflow on long chains.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self._accum(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- graph construction --------------------------------------------------

    @staticmethod
    def _op(data: np.ndarray, parents: Sequence["Tensor"],
            backward: Callable[[np.ndarray], None]) -> "Tensor":
        if grad_enabled() and any(p.requires_grad for p in parents):
            out = Tensor(data, requires_grad=True)
            out._parents = tuple(parents)
            out._backward = backward
            return out
        return Tensor(data)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _wrap(other)
        out = self.data + other.data

        def bw(g):
            self._accum(_unbroadcast(g, self.data.shape))
            other._accum(_unbroadcast(g, other.data.shape))

        return Tensor._op(out, (self, other), bw)

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = _wrap(other)
        out = self.data * other.data

        def bw(g):
            self._accum(_unbroadcast(g * other.data, self.data.shape))
            other._accum(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._op(out, (self, other), bw)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        out = -self.data

        def bw(g):
            self._accum(-g)

        return Tensor._op(out, (self,), bw)

    def __sub__(self, other) -> "Tensor":
        return self + (-_wrap(other))

    def __rsub__(self, other) -> "Tensor":
        return _wrap(other) - self

    def __truediv__(self, other) -> "Tensor":
        other = _wrap(other)
        out = self.data / other.data

        def bw(g):
            self._accum(_unbroadcast(g / other.data, self.data.shape))
            other._accum(_unbroadcast(-g * self.data / (other.data ** 2),
                                      other.data.shape))

        return Tensor._op(out, (self, other), bw)

    def __rtruediv__(self, other) -> "Tensor":
        return _wrap(other) / self

    def __pow__(self, p: Union[int, float]) -> "Tensor":
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = self.data ** p

        def bw(g):
            self._accum(g * p * self.data ** (p - 1))

        return Tensor._op(out, (self,), bw)

    def __matmul__(self, other) -> "Tensor":
        other = _wrap(other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise ValueError("matmul operands must have at least 2 dimensions")
        out = self.data @ other.data

        def bw(g):
            self._accum(_unbroadcast(g @ np.swapaxes(other.data, -1, -2),
                                     self.data.shape))
            other._accum(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g,
                                      other.data.shape))

        return Tensor._op(out, (self, other), bw)

    # -- elementwise nonlinearities -------------------------------------------

    def relu(self) -> "Tensor":
        out = np.maximum(self.data, 0.0)

        def bw(g):
            self._accum(g * (self.data > 0))

        return Tensor._op(out, (self,), bw)

    def exp(self) -> "Tensor":
        out = np.exp(self.data)

        def bw(g):
            self._accum(g * out)

        return Tensor._op(out, (self,), bw)

    def log(self) -> "Tensor":
        out = np.log(self.data)

        def bw(g):
            self._accum(g / self.data)

        return Tensor._op(out, (self,), bw)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor._op(out, (self,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- normalized maps with closed-form backwards ----------------------------

    def softmax(self, axis: int = -1) -> "Tensor":
        z = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)

        def bw(g):
            self._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

        return Tensor._op(out, (self,), bw)

    def log_softmax(self, axis: int = -1) -> "Tensor":
        z = self.data - self.data.max(axis=axis, keepdims=True)
        out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

        def bw(g):
            self._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

        return Tensor._op(out, (self,), bw)

    def layer_norm(self, eps: float = 1e-5) -> "Tensor":
        """Normalize over the last axis to zero mean, unit variance."""
        mu = self.data.mean(axis=-1, keepdims=True)
        var = self.data.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (self.data - mu) * inv

        def bw(g):
            dx = inv * (g - g.mean(axis=-1, keepdims=True)
                        - xhat * (g * xhat).mean(axis=-1, keepdims=True))
            self._accum(dx)

        return Tensor._op(xhat, (self,), bw)

    # -- shape manipulation -----------------------------------------------------

    def reshape(self, shape) -> "Tensor":
        out = self.data.reshape(shape)

        def bw(g):
            self._accum(g.reshape(self.data.shape))

        return Tensor._op(out, (self,), bw)

    def transpose(self, axes) -> "Tensor":
        out = self.data.transpose(axes)
        inverse = tuple(np.argsort(axes))

        def bw(g):
            self._accum(g.transpose(inverse))

        return Tensor._op(out, (self,), bw)

    def __getitem__(self, key) -> "Tensor":
        out = np.asarray(self.data[key])

        def bw(g):
            buf = np.zeros_like(self.data)
            np.add.at(buf, key, g)
            self._accum(buf)

        return Tensor._op(out.copy(), (self,), bw)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, offsets, axis=axis)):
            t._accum(part)

    return Tensor._op(out, tuple(tensors), bw)
