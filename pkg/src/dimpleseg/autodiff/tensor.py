"""Dense tensor with reverse-mode differentiation.

Every differentiable op appends a node to an implicit tape: the node gets a
monotonically increasing ``tape_id`` and keeps references to its inputs plus
a closure computing input gradients from the output gradient. ``backward``
walks the nodes reachable from the root in strict reverse append order.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Optional, Sequence

import numpy as np

_tape_counter = itertools.count()
_state = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (eval-mode inference)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape_id", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.tape_id: Optional[int] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.tape_id = None
        out._parents = ()
        out._backward = None
        out.requires_grad = False
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.tape_id = next(_tape_counter)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def backward(self) -> None:
        backward(self)

    # -- operator sugar; implementations live in ops -------------------------
    def __add__(self, other):
        from . import ops
        return ops.add_b(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _collect(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._backward is None:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    nodes.sort(key=lambda t: t.tape_id, reverse=True)
    return nodes


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf.

    Repeated calls accumulate; call ``zero_grad`` on leaves to reset.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    seed = np.ones_like(root.data)
    if root._backward is None:
        _accumulate(root, seed)
        return
    pending: dict[int, np.ndarray] = {id(root): seed}
    for node in _collect(root):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                _accumulate(parent, pg)
            elif id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + pg
            else:
                pending[id(parent)] = pg


def _accumulate(leaf: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.data.shape)
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad += g


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))
