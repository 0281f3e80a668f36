"""Differentiable tensors on a numpy backend.

Every operation records its parents and a backward closure on an operation
tape; ``Tensor.backward`` replays the tape in reverse topological order and
accumulates gradients into ``.grad``. Only first-order gradients are
supported. Float32 is the working precision; float64 inputs stay float64 so
gradient checks can run in double precision.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Optional, Sequence, Union

import numpy as np

__all__ = ["Tensor", "ShapeError", "no_grad", "is_grad_enabled"]

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform; names both shapes."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype == np.float64:
        return np.ascontiguousarray(arr)
    return np.ascontiguousarray(arr, dtype=np.float32)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if g != s:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional array with optional reverse-mode gradient tracking.

    Data is held contiguously; ``grad`` has the same shape and dtype as
    ``data`` once a backward pass has touched this tensor. Tensors are
    treated as immutable after construction except for optimizer updates
    on leaf parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "meta")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: Sequence["Tensor"] = (), _backward=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = tuple(_parents) if self.requires_grad else ()
        self._backward_fn = _backward if self.requires_grad else None
        self.meta: Optional[dict] = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        head = np.array2string(self.data, precision=5, threshold=16)
        return f"Tensor({head}, shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, dtype=self.data.dtype)

    # -- graph plumbing ------------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Iterable["Tensor"], backward) -> "Tensor":
        """Record one tape entry; drops the entry when grad mode is off."""
        parents = tuple(parents)
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = needs
        out.grad = None
        out._parents = parents if needs else ()
        out._backward_fn = backward if needs else None
        out.meta = None
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed=None) -> None:
        """Replay the recorded tape in reverse topological order.

        ``seed`` defaults to 1 for scalar outputs; non-scalar outputs need an
        explicit seed gradient of the same shape.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if seed is None:
            if self.size != 1:
                raise RuntimeError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.shape:
                raise ShapeError(f"seed shape {seed.shape} != output shape {self.shape}")

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(seed)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _lift(value, like: "Tensor") -> "Tensor":
        if isinstance(value, Tensor):
            return value
        return Tensor(np.asarray(value, dtype=like.dtype))

    def __add__(self, other) -> "Tensor":
        other = Tensor._lift(other, self)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def backward(g):
            self._accumulate(-g)

        return Tensor._make(-self.data, (self,), backward)

    def __sub__(self, other) -> "Tensor":
        other = Tensor._lift(other, self)
        out_data = self.data - other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(-_unbroadcast(g, other.shape))

        return Tensor._make(out_data, (self, other), backward)

    def __rsub__(self, other) -> "Tensor":
        return Tensor._lift(other, self).__sub__(self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor._lift(other, self)
        out_data = self.data * other.data

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = Tensor._lift(other, self)
        out_data = self.data / other.data

        def backward(g):
            self._accumulate(_unbroadcast(g / other.data, self.shape))
            other._accumulate(_unbroadcast(-g * self.data / (other.data * other.data),
                                           other.shape))

        return Tensor._make(out_data, (self, other), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor._lift(other, self).__truediv__(self)

    def __pow__(self, exponent) -> "Tensor":
        """Elementwise power with a constant (non-tensor) exponent."""
        p = float(exponent)
        out_data = self.data ** p

        def backward(g):
            self._accumulate(g * p * self.data ** (p - 1.0))

        return Tensor._make(out_data, (self,), backward)

    def __matmul__(self, other) -> "Tensor":
        other = Tensor._lift(other, self)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(f"matmul needs 2D+ operands, got {self.shape} @ {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul inner dims differ: {self.shape} @ {other.shape}")
        out_data = np.matmul(self.data, other.data)

        def backward(g):
            self._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(other.data, -1, -2)),
                                          self.shape))
            other._accumulate(_unbroadcast(np.matmul(np.swapaxes(self.data, -1, -2), g),
                                           other.shape))

        return Tensor._make(out_data, (self, other), backward)

    # -- elementwise functions -----------------------------------------------

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._make(out_data, (self,), backward)

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)

        def backward(g):
            self._accumulate(g / (2.0 * out_data))

        return Tensor._make(out_data, (self,), backward)

    def clamp_min(self, floor: float) -> "Tensor":
        """max(x, floor); gradient passes through where x >= floor."""
        out_data = np.maximum(self.data, floor)

        def backward(g):
            self._accumulate(g * (self.data >= floor))

        return Tensor._make(out_data, (self,), backward)

    def clamp_max(self, ceil: float) -> "Tensor":
        """min(x, ceil); gradient passes through where x <= ceil (ties included)."""
        out_data = np.minimum(self.data, ceil)

        def backward(g):
            self._accumulate(g * (self.data <= ceil))

        return Tensor._make(out_data, (self,), backward)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(g):
            self._accumulate(g.reshape(self.shape))

        return Tensor._make(out_data, (self,), backward)

    def __getitem__(self, index) -> "Tensor":
        out_data = self.data[index]

        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            self._accumulate(full)

        return Tensor._make(np.ascontiguousarray(out_data), (self,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy()
                                 if np.ndim(g) else np.full_like(self.data, g))
                return
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, tuple(a % self.ndim for a in axes))
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        return Tensor._make(np.asarray(out_data), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        # divide (not multiply by reciprocal) so a mean of exact ones is exactly 1
        return self.sum(axis=axis, keepdims=keepdims) / float(count)


TensorLike = Union[Tensor, np.ndarray, float, int, list]
