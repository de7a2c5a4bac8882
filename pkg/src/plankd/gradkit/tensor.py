"""Tensor type and the tape that records differentiable operations.

A single tape (``Graph``) is active per thread.  Every op whose inputs
require grad appends a ``Node`` to it; ``backward`` replays the tape in
reverse and then resets it, so each training step builds a fresh graph.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class GradkitError(ValueError):
    """Raised for shape errors, detached losses and other misuse."""


class NonFiniteError(GradkitError):
    """Raised in strict mode when an op receives NaN or inf."""


class Tensor:
    """An n-dimensional float64 array that can take part in a graph."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if 0 in arr.shape:
            raise GradkitError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # skips the copy in __init__; arr must already be float64
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise GradkitError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # operator sugar; the op functions live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, as_tensor(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(as_tensor(other), self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    """One recorded op: kind, inputs, output and the vector-Jacobian closure."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    index: int
    generation: int


@dataclass
class Graph:
    nodes: list[Node] = field(default_factory=list)
    generation: int = 0

    def append(self, op, inputs, output, vjp) -> Node:
        node = Node(op, tuple(inputs), output, vjp, len(self.nodes), self.generation)
        self.nodes.append(node)
        return node

    def reset(self) -> None:
        self.nodes = []
        self.generation += 1


class _State(threading.local):
    def __init__(self):
        self.graph = Graph()
        self.recording = True
        self.strict = False


_state = _State()


def active_graph() -> Graph:
    return _state.graph


@contextmanager
def graph():
    """Run a block against a fresh tape, restoring the previous one after."""
    previous = _state.graph
    g = Graph(generation=previous.generation + 1)
    _state.graph = g
    try:
        yield g
    finally:
        _state.graph = previous


@contextmanager
def no_grad():
    previous = _state.recording
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = previous


@contextmanager
def strict(enabled: bool = True):
    """Reject non-finite op inputs while active."""
    previous = _state.strict
    _state.strict = enabled
    try:
        yield
    finally:
        _state.strict = previous


def is_strict() -> bool:
    return _state.strict


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, vjp) -> Tensor:
    """Wrap an op result, appending a node when differentiation is live."""
    out = Tensor._wrap(out_data)
    if _state.recording and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = _state.graph.append(op, inputs, out, vjp)
    return out


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Leaves listed in ``wrt`` are guaranteed a gradient (zeros when the loss
    does not depend on them).  The active tape is consumed.
    """
    if loss.size != 1:
        raise GradkitError(f"backward needs a scalar loss, got shape {loss.shape}")
    g = _state.graph
    wrt = list(wrt) if wrt is not None else []
    if loss.node is not None:
        if loss.node.generation != g.generation or loss.node.index >= len(g.nodes) \
                or g.nodes[loss.node.index] is not loss.node:
            raise GradkitError("loss is detached: its graph was already consumed")
    elif loss.requires_grad:
        # a parameter used directly as the loss
        _accumulate_leaf(loss, np.ones_like(loss.data))
    elif not wrt:
        raise GradkitError("loss is detached: no requires-grad input on its path")

    if loss.node is not None:
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(g.nodes[: loss.node.index + 1]):
            gout = grads.pop(id(node.output), None)
            if gout is None:
                continue
            for inp, gin in zip(node.inputs, node.vjp(gout)):
                if gin is None or not inp.requires_grad:
                    continue
                if inp.node is None:
                    _accumulate_leaf(inp, gin)
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gin
                    else:
                        grads[key] = gin
    for t in wrt:
        if t.requires_grad and t.grad is None:
            t.grad = np.zeros_like(t.data)
    g.reset()


def _accumulate_leaf(t: Tensor, gin: np.ndarray) -> None:
    if gin.shape != t.data.shape:
        gin = gin.reshape(t.data.shape)
    if t.grad is None:
        t.grad = np.array(gin, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + gin
