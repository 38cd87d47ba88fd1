"""Dense tensors with reverse-mode automatic differentiation.

Storage is a numpy array; the graph is recorded only when at least one input
requires a gradient and gradient recording is enabled. Each node keeps a
closure mapping its output gradient to gradients for its parents.
"""
from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ShapeError

_state = {
    "dtype": np.float32,
    "grad_enabled": True,
    "debug": bool(os.environ.get("DIALEXPERTS_DEBUG")),
}


def get_default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    _state["dtype"] = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


def set_debug(flag: bool) -> None:
    _state["debug"] = bool(flag)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional float array that can record the operations applied to it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(_state["dtype"])
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = ""

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- graph --------------------------------------------------------------
    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        out = Tensor(data)
        if _state["debug"] and not np.all(np.isfinite(out.data)):
            raise FloatingPointError(f"non-finite values produced by {op}")
        if _state["grad_enabled"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

    def _topo(self) -> list["Tensor"]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(self._topo()):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                g = np.array(g, dtype=node.dtype)
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- arithmetic ------------------------------------------------------------
    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._result(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __neg__(self):
        return Tensor._result(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._result(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            )

        return Tensor._result(a.data / b.data, (a, b), backward, "div")

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, k: float):
        if isinstance(k, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self

        def backward(g):
            return (g * k * a.data ** (k - 1),)

        return Tensor._result(a.data**k, (a,), backward, "pow")

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    # -- reductions --------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape),)

        return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        """Maximum; the gradient goes to the first maximal entry."""
        a = self
        if axis is None:
            flat = a.data.reshape(-1)
            idx = int(np.argmax(flat))

            def backward_all(g):
                out = np.zeros(flat.shape, dtype=np.result_type(g, a.dtype))
                out[idx] = np.asarray(g).reshape(-1)[0]
                return (out.reshape(a.shape),)

            value = flat[idx].reshape((1,) * a.ndim if keepdims else ())
            return Tensor._result(value, (a,), backward_all, "max")
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        value = np.take_along_axis(a.data, idx, axis=axis)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            out = np.zeros(a.shape, dtype=np.result_type(g, a.dtype))
            np.put_along_axis(out, idx, g, axis=axis)
            return (out,)

        if not keepdims:
            value = np.squeeze(value, axis=axis)
        return Tensor._result(value, (a,), backward, "max")

    # -- shape ----------------------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        a = self
        return Tensor._result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")

    def swapaxes(self, i: int, j: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return self.transpose(axes)

    @property
    def T(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    def __getitem__(self, index) -> "Tensor":
        a = self
        if isinstance(index, Tensor):
            raise TypeError("index with numpy arrays, not Tensors")

        def backward(g):
            out = np.zeros(a.shape, dtype=g.dtype)
            np.add.at(out, index, g)
            return (out,)

        return Tensor._result(a.data[index], (a,), backward, "getitem")

    # -- elementwise -------------------------------------------------------------------
    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return Tensor._result(out, (a,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        a = self
        return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")

    def sqrt(self) -> "Tensor":
        a = self
        out = np.sqrt(a.data)
        return Tensor._result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")

    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return Tensor._result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")

    def relu(self) -> "Tensor":
        a = self
        keep = a.data > 0
        return Tensor._result(a.data * keep, (a,), lambda g: (g * keep,), "relu")


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype or get_default_dtype()), requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with broadcasting over leading dimensions."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    if len(parts) == 1:
        return parts[0]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._result(np.concatenate([p.data for p in parts], axis=axis), parts, backward, "concat")


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._result(np.stack([p.data for p in parts], axis=axis), parts, backward, "stack")
