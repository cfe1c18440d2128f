"""Dense-array tensor with reverse-mode differentiation.

A Tensor wraps a numpy array. Operations on tensors record their inputs and
a backward closure; calling ``backward()`` on a scalar walks the recorded
graph in reverse topological order and accumulates gradients additively into
every grad-enabled tensor it can reach. Tensors created with
``requires_grad=True`` carry a same-shape ``grad`` accumulator from the
start, so leaves that are not on any path to the loss hold exact zeros.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

Scalar = Union[int, float]


class Tensor:
    """N-dimensional float array participating in an autodiff graph."""

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        _parents: Sequence["Tensor"] = (),
        _backward: Optional[Callable[[], None]] = None,
        name: Optional[str] = None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if arr.dtype == np.int64 else np.float32)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(arr) if self.requires_grad else None
        )
        self.name = name
        self._parents = tuple(p for p in _parents if isinstance(p, Tensor))
        self._backward = _backward

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # -- grad bookkeeping ---------------------------------------------------

    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        """A view of the same values with no graph history."""
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        """Reverse-mode pass from a scalar.

        Every grad-enabled tensor reachable from ``self`` receives the sum
        of all its gradient contributions; unreachable leaves keep their
        zero accumulators untouched.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        order = _toposort(self)
        self._ensure_grad()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- operator sugar (implemented in ops.py, bound at import) ------------

    def sum(self) -> "Tensor":
        from . import ops

        return ops.sum_all(self)

    def mean(self) -> "Tensor":
        from . import ops

        return ops.mean_all(self)

    def reshape(self, *shape) -> "Tensor":
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __sub__(self, other):
        from . import ops

        return ops.add(self, -as_tensor(other))

    def __rsub__(self, other):
        from . import ops

        return ops.add(as_tensor(other), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; divide by a scalar")
        from . import ops

        return ops.mul(self, 1.0 / float(other))

    def __getitem__(self, index):
        from . import ops

        return ops.getitem(self, index)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _toposort(root: Tensor) -> list:
    """Iterative post-order over the graph feeding ``root``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order
