"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside a ``with Tape() as tape:`` block are recorded when
any input requires a gradient; ``backward(tape, loss)`` replays the tape in
reverse. Outside a tape, operations only compute values.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Inputs to an operation have incompatible dimensions."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class NumericFault(FloatingPointError):
    """An operation produced NaN or infinite values."""


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NumericFault("tensor values must be finite")
        self.requires_grad = requires_grad
        self.name = name
        self.is_leaf = True

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "inputs", "backward", "op")

    def __init__(self, out, inputs, backward, op):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.op = op


_active = threading.local()


class Tape:
    """Ordered record of executed operations.

    Nodes are appended in execution order, so every node follows the nodes
    that produced its inputs.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        stack = getattr(_active, "stack", None)
        if stack is None:
            stack = _active.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _active.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)


def current_tape() -> Tape | None:
    stack = getattr(_active, "stack", None)
    return stack[-1] if stack else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericFault(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad, out.name, out.is_leaf = False, None, False
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, tuple(inputs), backward, op))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make("div", out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


# linear algebra

def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape ``[..., n, k]`` (or ``[k]``) and ``b`` of shape ``[k, m]``."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ShapeError(f"matmul: right operand must be 2-D, got shape {b.shape}")
    if a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape} @ {b.shape} "
            f"({a.shape[-1] if a.ndim else None} != {b.shape[0]})")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make("matmul", out, (a, b), backward)


def affine(x, W, b) -> Tensor:
    """``x @ W + b``."""
    return add(matmul(x, W), b)


def rowdot(a, b) -> Tensor:
    """Dot product along the last axis."""
    return sum_(mul(a, b), axis=-1)


# nonlinearities

def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)
    return _make("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(x) -> Tensor:
    """``log(sigmoid(x))`` without forming the sigmoid."""
    x = as_tensor(x)
    d = x.data
    out = np.minimum(d, 0.0) - np.log1p(np.exp(-np.abs(d)))
    return _make("log_sigmoid", out, (x,), lambda g: (g * _stable_sigmoid(-d),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _make("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0
    return _make("relu", np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make("log", out, (x,), lambda g: (g / x.data,))


def clamp_min(x, floor: float) -> Tensor:
    x = as_tensor(x)
    keep = x.data >= floor
    return _make("clamp_min", np.where(keep, x.data, floor), (x,), lambda g: (g * keep,))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make("softmax", p, (x,), backward)


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout. ``rate == 0`` returns ``x`` unchanged."""
    if rate <= 0.0:
        return x
    x = as_tensor(x)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make("dropout", x.data * mask, (x,), lambda g: (g * mask,))


# reductions and shape ops

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    if n == 0:
        raise ContractError("mean of an empty tensor")
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, tensors, backward)


def detach(x) -> Tensor:
    return Tensor(as_tensor(x).data)


# indexing

def embedding_lookup(table, indices, padding_idx: int | None = None) -> Tensor:
    """Rows of ``table`` at integer ``indices``; output shape ``indices.shape + (d,)``.

    The gradient for ``padding_idx`` rows is dropped so that row stays fixed.
    """
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: index out of range for table with {table.shape[0]} rows")
    out = table.data[idx]

    def backward(g):
        flat = idx.reshape(-1)
        gt = kernels.scatter_add_rows(g.reshape(-1, table.shape[1]), flat, table.shape[0])
        if padding_idx is not None:
            gt[padding_idx] = 0.0
        return (gt,)

    return _make("embedding_lookup", out, (table,), backward)


take_rows = embedding_lookup


def segment_sum(x, segment_ids, num_segments: int) -> Tensor:
    """``out[s] = sum of x[i] with segment_ids[i] == s`` for a 2-D ``x``."""
    x = as_tensor(x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if x.ndim != 2 or seg.shape != (x.shape[0],):
        raise ShapeError(f"segment_sum: need x [n, d] and ids [n], got {x.shape} and {seg.shape}")
    out = kernels.scatter_add_rows(x.data, seg, num_segments)
    return _make("segment_sum", out, (x,), lambda g: (g[seg],))


def pick(x, index) -> Tensor:
    """``x[b, index[b]]`` for a 2-D ``x``."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    if idx.shape != (x.shape[0],):
        raise ShapeError(f"pick: need one index per row, got {idx.shape} for {x.shape}")

    def backward(g):
        gx = np.zeros(x.shape)
        gx[rows, idx] = g
        return (gx,)

    return _make("pick", x.data[rows, idx], (x,), backward)


# sequence ops

def conv1d_seq(seq, filters, bias, window: int) -> Tensor:
    """Valid 1-D convolution over time.

    ``seq`` is ``[B, L, d]``, ``filters`` is ``[window * d, F]`` (window-major),
    ``bias`` is ``[F]``; the result is ``[B, L - window + 1, F]``.
    """
    seq, filters, bias = as_tensor(seq), as_tensor(filters), as_tensor(bias)
    if seq.ndim != 3:
        raise ShapeError(f"conv1d_seq: sequence must be [B, L, d], got {seq.shape}")
    b, length, d = seq.shape
    if window < 1 or window > length:
        raise ShapeError(f"conv1d_seq: window {window} exceeds padded length {length}")
    if filters.shape[0] != window * d or bias.shape != (filters.shape[1],):
        raise ShapeError(
            f"conv1d_seq: filters {filters.shape} / bias {bias.shape} do not match "
            f"window {window} x features {d}")
    cols = kernels.unfold(seq.data, window)
    out = cols @ filters.data + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        g_filters = cols.reshape(-1, cols.shape[-1]).T @ g2
        g_bias = g2.sum(axis=0)
        g_seq = kernels.fold(g @ filters.data.T, window, length)
        return g_seq, g_filters, g_bias

    return _make("conv1d_seq", out, (seq, filters, bias), backward)


def max_over_time(x, counts=None) -> Tensor:
    """Max over axis 1 of ``[B, T, F]``, restricted to the first ``counts[b]`` steps.

    The gradient goes to the first maximal position.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"max_over_time: expected [B, T, F], got {x.shape}")
    b, steps, _ = x.shape
    if counts is None:
        counts = np.full(b, steps, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (b,) or (b and (counts.min() < 1 or counts.max() > steps)):
        raise ShapeError(f"max_over_time: counts must lie in [1, {steps}] for each of {b} rows")
    out, arg = kernels.max_pool(x.data, counts)
    return _make("max_over_time", out, (x,),
                 lambda g: (kernels.max_pool_backward(g, arg, steps),))


# reverse pass

def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
    """Gradients of scalar ``loss`` with respect to leaf tensors.

    Returns a dict mapping each requires-grad leaf reached on ``tape`` to its
    gradient tensor. Tensors in ``params`` that the loss does not depend on
    get zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    if loss.is_leaf and loss.requires_grad:
        grads[id(loss)] = np.ones(loss.shape)
        leaves[id(loss)] = loss
    elif loss.requires_grad:
        if not any(n.out is loss for n in reversed(tape.nodes)):
            raise ContractError("loss was not produced on this tape")
        grads[id(loss)] = np.ones(loss.shape)
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if inp.is_leaf:
                    leaves[key] = inp
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
    result = {t: Tensor(np.reshape(grads[k], t.shape)) for k, t in leaves.items()}
    if params is not None:
        for p in params:
            if p not in result:
                result[p] = Tensor(np.zeros(p.shape))
    return result
