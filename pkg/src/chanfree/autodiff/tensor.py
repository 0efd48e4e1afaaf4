"""Tensor with reverse-mode gradient tracking.

Every differentiable op builds a node holding its output array, references to
its parent tensors and a closure that pushes the output gradient back into the
parents. ``Tensor.backward`` walks the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from chanfree.errors import ConfigurationError, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Dense array node in the computation graph.

    Parameters
    ----------
    data : array_like
        Values. Integer input is promoted to float64.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad``.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents: Sequence["Tensor"] = (),
                 _backward: Callable[[np.ndarray], None] | None = None, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self.name = name

    # -- array-like surface ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray, copy: bool = True):
        """Add ``g`` into ``grad``; ``copy=False`` hands over a freshly allocated array."""
        if g.shape != self.data.shape:
            raise ConfigurationError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            if copy or g.dtype != self.data.dtype or not g.flags.writeable:
                g = np.array(g, dtype=self.data.dtype, copy=True)
            self.grad = g
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None):
        """Backpropagate from this tensor.

        ``grad`` defaults to ones, which is the usual choice for a scalar loss.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # interior gradients are dead once propagated
            node.grad = None

    # -- operator sugar (implemented in functional) -------------------------
    def __add__(self, other):
        from chanfree.autodiff import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from chanfree.autodiff import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from chanfree.autodiff import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from chanfree.autodiff import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from chanfree.autodiff import functional as F
        return F.div(self, other)

    def __neg__(self):
        from chanfree.autodiff import functional as F
        return F.mul(self, -1.0)

    def __getitem__(self, idx):
        from chanfree.autodiff import functional as F
        return F.getitem(self, idx)

    def reshape(self, *shape):
        from chanfree.autodiff import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from chanfree.autodiff import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from chanfree.autodiff import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)


class Param(Tensor):
    """Trainable tensor carrying its own Adam moment estimates."""

    def __init__(self, data, name: str | None = None, trainable: bool = True):
        super().__init__(data, requires_grad=trainable, name=name)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def assign(self, value: np.ndarray):
        value = np.asarray(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise ConfigurationError(f"cannot assign shape {value.shape} to param {self.name!r} of shape {self.shape}")
        self.data[...] = value

    def reset_state(self):
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def astype(self, dtype):
        self.data = self.data.astype(dtype)
        self.m = self.m.astype(dtype)
        self.v = self.v.astype(dtype)
        self.grad = None if self.grad is None else self.grad.astype(dtype)
        return self


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(out: np.ndarray, parents: Iterable[Tensor], backward: Callable[[np.ndarray], None],
              check_finite: bool = True) -> Tensor:
    """Wrap an op result; links the graph only when a parent needs gradients."""
    if check_finite and not np.isfinite(out).all():
        raise NumericError("non-finite value produced by differentiable op")
    parents = tuple(parents)
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(out)
    return Tensor(out, requires_grad=True, _parents=parents, _backward=backward)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order
