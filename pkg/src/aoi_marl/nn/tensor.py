"""Reverse-mode automatic differentiation on numpy float64 arrays.

Every operation builds a fresh node in the computation graph; calling
:func:`backward` on a scalar walks the graph once in reverse topological
order and accumulates gradients into every reachable :class:`Parameter`.
There is no in-place mutation of recorded tensors and no broadcasting
beyond what the network layers here actually use (row bias vectors and
column scalars).

Forward/backward on one network is single-threaded (the grad-enable and
kink-monitor switches are module globals); parameter snapshots may be
copied across threads, but one parameter set must never be mutated
concurrently.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractViolation

_grad_enabled = True
_kink_monitor: Optional["KinkMonitor"] = None


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class KinkMonitor:
    """Tracks how close any ReLU/absolute input came to its kink at 0."""

    def __init__(self):
        self.min_gap = np.inf

    def observe(self, values: np.ndarray) -> None:
        if values.size:
            gap = float(np.min(np.abs(values)))
            if gap < self.min_gap:
                self.min_gap = gap


@contextlib.contextmanager
def monitor_kinks():
    """Collect the minimum |input| seen by ReLU/absolute inside the block.

    Finite-difference checks use this to reject instances whose gradient
    is not well-defined at the sampled point.
    """
    global _kink_monitor
    previous = _kink_monitor
    monitor = KinkMonitor()
    _kink_monitor = monitor
    try:
        yield monitor
    finally:
        _kink_monitor = previous


class Tensor:
    """A node of the computation graph holding a float64 ndarray.

    ``parents`` and ``backward_fn`` are empty for leaves; for recorded
    operations ``backward_fn(output_grad)`` returns one gradient array per
    parent (``None`` for parents that do not require gradients).
    """

    __slots__ = ("data", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents: tuple = parents
        self.backward_fn: Optional[Callable] = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the stored values."""
        return self.data.reshape(-1)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf with a unique id and a persistent gradient buffer.

    The gradient is zero right after construction or :meth:`zero_grad`
    and before any backward pass; backward passes add into it.
    """

    __slots__ = ("id", "grad")

    def __init__(self, pid: str, data):
        super().__init__(data, requires_grad=True)
        if not np.all(np.isfinite(self.data)):
            raise ContractViolation(f"parameter {pid!r} has non-finite values")
        self.id = pid
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.id!r}, shape={self.data.shape})"


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, parents=tuple(parents), backward_fn=backward_fn, requires_grad=True)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise and linear-algebra operations -------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward_fn(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _node(out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward_fn(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _node(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _node(out, (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(
            f"matmul shapes do not conform: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def backward_fn(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _node(out, (a, b), backward_fn)


def relu(t: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is taken as 0."""
    if _kink_monitor is not None:
        _kink_monitor.observe(t.data)
    mask = t.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _node(np.where(mask, t.data, 0.0), (t,), backward_fn)


def absolute(t: Tensor) -> Tensor:
    """Elementwise |x|; the subgradient at 0 is taken as 0."""
    if _kink_monitor is not None:
        _kink_monitor.observe(t.data)
    sign = np.sign(t.data)

    def backward_fn(g):
        return (g * sign,)

    return _node(np.abs(t.data), (t,), backward_fn)


def leaky_relu(t: Tensor, slope: float = 0.01) -> Tensor:
    """Elementwise x for x > 0, slope * x otherwise.

    Strictly increasing with a gradient bounded away from zero, so deeply
    negative inputs neither die (ReLU) nor saturate (ELU).
    """
    pos = t.data > 0
    out = np.where(pos, t.data, slope * t.data)

    def backward_fn(g):
        return (g * np.where(pos, 1.0, slope),)

    return _node(out, (t,), backward_fn)


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward_fn(g):
        return (g * out * (1.0 - out),)

    return _node(out, (t,), backward_fn)


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.data)

    def backward_fn(g):
        return (g * (1.0 - out * out),)

    return _node(out, (t,), backward_fn)


def sum_(t: Tensor, axis=None, keepdims=False) -> Tensor:
    out = t.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.data.shape).copy(),)

    return _node(out, (t,), backward_fn)


def mean(t: Tensor) -> Tensor:
    n = t.data.size
    return mul(sum_(t), _lift(1.0 / n))


def reshape(t: Tensor, shape) -> Tensor:
    out = t.data.reshape(shape)

    def backward_fn(g):
        return (g.reshape(t.data.shape),)

    return _node(out, (t,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    out = np.concatenate(arrays, axis=axis)
    sizes = [a.shape[axis] for a in arrays]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        grads = []
        for i, t in enumerate(tensors):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(offsets[i], offsets[i + 1])
                grads.append(g[tuple(sl)])
            else:
                grads.append(None)
        return tuple(grads)

    return _node(out, tuple(tensors), backward_fn)


def index_rows(t: Tensor, indices) -> Tensor:
    """Gather rows; the backward pass scatter-adds into the source rows."""
    idx = np.asarray(indices, dtype=np.intp)
    out = t.data[idx]

    def backward_fn(g):
        grad = np.zeros_like(t.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return _node(out, (t,), backward_fn)


def segment_sum(t: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows into ``num_segments`` buckets; empty buckets stay zero."""
    seg = np.asarray(segment_ids, dtype=np.intp)
    out = np.zeros((num_segments,) + t.data.shape[1:], dtype=np.float64)
    np.add.at(out, seg, t.data)

    def backward_fn(g):
        return (g[seg],)

    return _node(out, (t,), backward_fn)


def take_per_row(t: Tensor, column_indices) -> Tensor:
    """Pick one column per row, returning an (n, 1) tensor."""
    if t.data.ndim != 2:
        raise ContractViolation("take_per_row expects a 2-D tensor")
    cols = np.asarray(column_indices, dtype=np.intp)
    rows = np.arange(t.data.shape[0])
    out = t.data[rows, cols][:, None]

    def backward_fn(g):
        grad = np.zeros_like(t.data)
        grad[rows, cols] = g[:, 0]
        return (grad,)

    return _node(out, (t,), backward_fn)


def slice_cols(t: Tensor, start: int, stop: int) -> Tensor:
    out = t.data[:, start:stop]

    def backward_fn(g):
        grad = np.zeros_like(t.data)
        grad[:, start:stop] = g
        return (grad,)

    return _node(out, (t,), backward_fn)


# -- reverse pass -------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into every reachable Parameter.

    ``loss`` must be a scalar (one element) produced by recorded
    operations; parameters that the loss does not depend on are left
    untouched.
    """
    if loss.data.size != 1:
        raise ContractViolation(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if isinstance(node, Parameter):
            node.grad += grad
        if node.backward_fn is None:
            continue
        parent_grads = node.backward_fn(grad)
        for parent, pgrad in zip(node.parents, parent_grads):
            if pgrad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pgrad
            else:
                grads[key] = pgrad
