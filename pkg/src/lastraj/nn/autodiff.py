"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation whose inputs require gradients while
it is active. ``tape.backward(loss)`` replays the record in reverse and
returns the gradient of the scalar ``loss`` for each requested tensor.
Outside an active tape operations run as plain numpy and record nothing.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ArgumentError

_ACTIVE: list["Tape"] = []


class Tensor:
    """Dense float64 array, optionally a node on the active tape."""

    __slots__ = ("value", "requires_grad", "node", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of operations; use as a context manager."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor, wrt: Sequence[Tensor] | None = None) -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss``; keyed by ``id`` of each tensor in ``wrt``.

        Tensors in ``wrt`` that do not influence ``loss`` get a zero gradient.
        """
        if loss.size != 1:
            raise ArgumentError(f"loss must be a scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        owned: set[int] = set()  # accumulators allocated here, safe to add into in place
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key not in grads:
                    grads[key] = gi
                elif key in owned:
                    grads[key] += gi
                else:
                    grads[key] = grads[key] + gi
                    owned.add(key)
        if wrt is None:
            return grads
        return {id(t): grads.get(id(t), np.zeros_like(t.value)) for t in wrt}


def _record(op: str, inputs: Sequence[Tensor], value: np.ndarray, backward: Callable) -> Tensor:
    out = Tensor(value)
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(op, tuple(inputs), out, backward)
        out.node = node
        _ACTIVE[-1].nodes.append(node)
    return out


def grad_enabled() -> bool:
    return bool(_ACTIVE)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("add", (a, b), a.value + b.value,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("sub", (a, b), a.value - b.value,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record("mul", (a, b), a.value * b.value,
                   lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return _record("div", (a, b), out,
                   lambda g: (_unbroadcast(g / b.value, a.shape), _unbroadcast(-g * out / b.value, b.shape)))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record("square", (a,), a.value * a.value, lambda g: (2.0 * a.value * g,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _record("abs", (a,), np.abs(a.value), lambda g: (g * np.sign(a.value),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _record("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _record("log", (a,), np.log(a.value), lambda g: (g / a.value,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes only where the input is inside [lo, hi]."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _record("clip", (a,), np.clip(a.value, lo, hi), lambda g: (g * inside,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows and avoids sign masks
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.value)
    return _record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.value > 0
    return _record("relu", (a,), a.value * pos, lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.value > 0, 1.0, slope)
    return _record("leaky_relu", (a,), a.value * scale, lambda g: (g * scale,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _record("softplus", (a,), out, lambda g: (g * _sigmoid(x),))


# ---------------------------------------------------------------------------
# reductions and shape ops

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", (a,), out, backward)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _record("reshape", (a,), a.value.reshape(shape), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _record("transpose", (a,), np.transpose(a.value, axes), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return _record("getitem", (a,), a.value[index], backward)


def take_rows(table, idx) -> Tensor:
    """Embedding lookup: ``table[idx]`` with scatter-add backward."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.value)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)

    return _record("take_rows", (table,), table.value[idx], backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    return _record("concat", tensors, out, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.value for t in tensors], axis=axis)
    n = len(tensors)
    return _record("stack", tensors, out,
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def where(mask, a, b) -> Tensor:
    """Select ``a`` where the constant ``mask`` is true, ``b`` elsewhere."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, a.value, b.value)
    return _record("where", (a, b), out,
                   lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape),
                              _unbroadcast(np.where(mask, 0.0, g), b.shape)))


# ---------------------------------------------------------------------------
# linear algebra and normalizations

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.value, g * a.value
        if b.ndim == 1:
            return np.multiply.outer(g, b.value), np.tensordot(g, a.value, axes=(range(g.ndim), range(g.ndim)))
        if a.ndim == 1:
            return g @ b.value.T, np.outer(a.value, g)
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), a.value @ b.value, backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` as one node."""
    x, weight = as_tensor(x), as_tensor(weight)
    out = x.value @ weight.value
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.value
        inputs.append(bias)

    def backward(g):
        gx = g @ weight.value.T
        x2 = x.value.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        grads = [gx, x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _record("linear", inputs, out, backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record("softmax", (a,), out, backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (a,), out, backward)


# ---------------------------------------------------------------------------
# fused recurrent ops

def lstm_state(gates, c) -> Tensor:
    """New cell state from pre-activation gates laid out as [i | f | o | g]."""
    gates, c = as_tensor(gates), as_tensor(c)
    h = c.shape[-1]
    gv = gates.value
    i = _sigmoid(gv[..., :h])
    f = _sigmoid(gv[..., h:2 * h])
    cand = np.tanh(gv[..., 3 * h:])
    out = f * c.value + i * cand

    def backward(g):
        dg = np.concatenate([g * cand * i * (1 - i), g * c.value * f * (1 - f), np.zeros_like(g),
                             g * i * (1 - cand * cand)], axis=-1)
        return dg, g * f

    return _record("lstm_state", (gates, c), out, backward)


def lstm_output(gates, c_new) -> Tensor:
    """Hidden state ``o * tanh(c_new)`` with ``o`` from the third gate block."""
    gates, c_new = as_tensor(gates), as_tensor(c_new)
    h = c_new.shape[-1]
    o = _sigmoid(gates.value[..., 2 * h:3 * h])
    tc = np.tanh(c_new.value)
    out = o * tc

    def backward(g):
        dg = np.zeros_like(gates.value)
        dg[..., 2 * h:3 * h] = g * tc * o * (1 - o)
        return dg, g * o * (1 - tc * tc)

    return _record("lstm_output", (gates, c_new), out, backward)


def gates_affine(u, h, w_u, w_h, bias) -> Tensor:
    """LSTM pre-activations ``u @ w_u + h @ w_h + bias`` as one node."""
    u, h, w_u, w_h, bias = (as_tensor(t) for t in (u, h, w_u, w_h, bias))
    out = u.value @ w_u.value + h.value @ w_h.value + bias.value

    def backward(g):
        return (g @ w_u.value.T, g @ w_h.value.T, u.value.T @ g, h.value.T @ g, g.sum(axis=0))

    return _record("gates_affine", (u, h, w_u, w_h, bias), out, backward)
