"""Dense float64 tensor with a reverse-mode gradient tape.

Every op in :mod:`ecmsa.ops` produces a new :class:`Tensor` whose
``_backward`` closure maps the output gradient to one gradient per parent.
``Tensor.backward`` walks the graph in reverse topological order and
accumulates into ``.grad`` of leaf tensors that require gradients.

Determinism: reductions are numpy's pairwise sums over C-contiguous buffers
and contractions go through a single BLAS gemm per op, so identical inputs
on an identical build give identical bits.  Layout is always row-major.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import NumericError, UsageError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the tape (inference, finite differences)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if arr.ndim and 0 in arr.shape:
            raise UsageError(f"zero-size extent in shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad=False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr, dtype=np.float64)
        t.requires_grad = requires_grad
        t.grad = None
        t._parents = ()
        t._backward = None
        t.op = "leaf"
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, other)
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def backward(self):
        """Backpropagate from this scalar; gradients accumulate on leaves."""
        if self.data.size != 1:
            _raise_not_scalar(self)
        if not self.requires_grad:
            raise UsageError("backward() on a tensor that is not on the tape")

        order = _toposort(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _raise_not_scalar(t):
    raise UsageError(f"expected a scalar tensor, got shape {t.shape}")


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
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


def make_op(name: str, data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Wrap a forward result; record it on the tape when any parent needs grad."""
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by {name}")
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor._wrap(data, requires_grad=needs)
    out.op = name
    if needs:
        out._parents = parents
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
