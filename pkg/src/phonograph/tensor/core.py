"""Tensor type and reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import threading

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense float64 array that can take part in reverse-mode differentiation.

    Results of primitives keep references to their parents and a closure that
    maps the output gradient to one gradient per parent (``None`` when a
    parent does not need one).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @classmethod
    def from_op(cls, data, parents, backward, op):
        """Build the output of a primitive.

        ``backward(g)`` must return a tuple aligned with ``parents``. The
        node is only attached to the graph when recording is on and some
        parent requires a gradient.
        """
        if grad_enabled() and any(p.requires_grad for p in parents):
            return cls(data, True, _parents=tuple(parents), _backward=backward, op=op)
        return cls(data, False, op=op)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self):
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # Arithmetic sugar; the primitives live in ops.
    def __add__(self, other):
        from phonograph.tensor import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from phonograph.tensor import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from phonograph.tensor import ops

        return ops.add(ops.neg(self), other)

    def __mul__(self, other):
        from phonograph.tensor import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from phonograph.tensor import ops

        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a scalar")
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        from phonograph.tensor import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from phonograph.tensor import ops

        return ops.matmul(self, other)

    @property
    def T(self):
        from phonograph.tensor import ops

        return ops.transpose(self)


class Tape:
    """Topologically ordered record of the primitives that produced a loss."""

    def __init__(self, nodes=None):
        self.nodes = list(nodes or [])

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order = []
        seen = set()
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
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ancestor of ``loss`` that requires it.

    Leaf gradients accumulate across calls; intermediate ones are replaced.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    tape = Tape.record(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    tape.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
