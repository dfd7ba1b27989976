"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable operation that touches a tensor with ``requires_grad``
appends a :class:`Node` to the thread's active :class:`Tape`.  Because nodes
are appended as they are created, the tape is topologically ordered by
construction; :func:`backward` walks it once in reverse and then clears it.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy a primitive's contract."""


class Node:
    __slots__ = ("out", "parents", "backward_fn", "op")

    def __init__(self, out: "Tensor", parents: tuple, backward_fn: Callable, op: str):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Ordered record of primitive applications for one forward pass."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()


class _State(threading.local):
    def __init__(self) -> None:
        self.tape = Tape()
        self.enabled = True


_state = _State()


def current_tape() -> Tape:
    return _state.tape


def grad_enabled() -> bool:
    return _state.enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def fresh_tape() -> Iterator[Tape]:
    """Swap in an empty tape for the block (used by gradient checks)."""
    prev = _state.tape
    _state.tape = Tape()
    try:
        yield _state.tape
    finally:
        _state.tape = prev


class Tensor:
    """Immutable n-d float64 array that may participate in autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.flags.writeable and arr.base is not None:
            arr = arr.copy()
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.name = name

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar (implemented in ops) ---------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

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
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __pow__(self, p: float):
        from . import ops
        return ops.power(self, p)

    def __getitem__(self, idx):
        from . import ops
        return ops.index(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


def _raise_item(shape):
    raise ShapeError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap a primitive's output and record it when any input needs a gradient."""
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == DTYPE else data.astype(DTYPE)
    out.grad = None
    out.is_leaf = False
    out.name = None
    if _state.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _state.tape.record(Node(out, tuple(parents), backward_fn, op))
    else:
        out.requires_grad = False
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that ``loss`` depends on, then drop the tape."""
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    if not loss.requires_grad or not tape.nodes:
        raise RuntimeError("backward() called with an empty tape: loss is not connected to any parameter")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    try:
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = unbroadcast(np.asarray(pg, dtype=DTYPE), parent.shape)
                if parent.is_leaf:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    prev = grads.get(key)
                    grads[key] = pg if prev is None else prev + pg
    finally:
        tape.clear()
