"""Tape-based reverse-mode differentiation over dense float64 arrays.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one input is tracked (a leaf created with ``requires_grad=True`` or the
output of a recorded operation). Outside a tape every op is a plain numpy
computation, which is what evaluation code relies on.

    >>> w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(square(w))
    >>> tape.backward(loss)[w]
    array([2., 4., 6.])
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._node = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self._node is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{tag})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)


def _not_scalar(t: Tensor):
    raise ShapeError(f"expected a single-element tensor, got shape {t.shape}")


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of operations; parents always precede children."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)

    def backward(self, loss: Tensor) -> "Gradients":
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.tracked:
            raise ValueError("loss is not connected to any tracked tensor")
        adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        grads = Gradients()
        if loss.requires_grad and loss._node is None:
            grads[loss] = adj[id(loss)]
            return grads
        for node in reversed(self.nodes):
            g = adj.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.tracked:
                    continue
                if parent._node is None:
                    if parent in grads:
                        grads[parent] = grads[parent] + pg
                    else:
                        grads[parent] = pg
                else:
                    key = id(parent)
                    adj[key] = adj[key] + pg if key in adj else pg
        return grads


class Gradients(dict):
    """Leaf tensor -> gradient array. Leaves without gradient flow are absent."""


def record(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op; ``vjp(g)`` returns one gradient per parent."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value produced in forward pass")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out._node = None
    if _TAPES and any(p.tracked for p in parents):
        node = _Node(out, tuple(parents), vjp)
        out._node = node
        _TAPES[-1].nodes.append(node)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(t: Tensor) -> Tensor:
    return Tensor(t.data)


# ---------------------------------------------------------------- binary ops


def _binary_shapes(a: Tensor, b: Tensor):
    if a.shape == b.shape:
        return None
    if a.size == 1:
        return "a"
    if b.size == 1:
        return "b"
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape} (only scalar broadcasting)")


def _unbroadcast(g: np.ndarray, t: Tensor, scalar: bool) -> np.ndarray:
    return np.sum(g).reshape(t.shape) if scalar else g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    which = _binary_shapes(a, b)
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a, which == "a"), _unbroadcast(g, b, which == "b")),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    which = _binary_shapes(a, b)
    return record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a, which == "a"), _unbroadcast(-g, b, which == "b")),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    which = _binary_shapes(a, b)
    return record(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a, which == "a"),
            _unbroadcast(g * a.data, b, which == "b"),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    which = _binary_shapes(a, b)
    if np.any(b.data == 0):
        raise DomainError("division by zero")
    out = a.data / b.data
    return record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a, which == "a"),
            _unbroadcast(-g * out / b.data, b, which == "b"),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} x {b.shape}")
    return record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with the bias row added to every row of the product."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine shape mismatch {x.shape} x {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias shape {b.shape} does not match {w.shape[1]} outputs")
    return record(
        x.data @ w.data + b.data,
        (x, w, b),
        lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)),
    )


# ----------------------------------------------------------------- unary ops


def neg(t: Tensor) -> Tensor:
    return record(-t.data, (t,), lambda g: (-g,))


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0
    return record(np.where(mask, t.data, 0.0), (t,), lambda g: (g * mask,))


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.data)
    return record(out, (t,), lambda g: (g * (1.0 - out * out),))


def exp(t: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(t.data)
    return record(out, (t,), lambda g: (g * out,))


def log(t: Tensor) -> Tensor:
    if np.any(t.data <= 0):
        raise DomainError("log of a non-positive value")
    return record(np.log(t.data), (t,), lambda g: (g / t.data,))


def abs_(t: Tensor) -> Tensor:
    # subgradient at 0 is 0
    return record(np.abs(t.data), (t,), lambda g: (g * np.sign(t.data),))


def square(t: Tensor) -> Tensor:
    return record(t.data * t.data, (t,), lambda g: (2.0 * g * t.data,))


def sqrt(t: Tensor) -> Tensor:
    if np.any(t.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(t.data)

    def vjp(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return record(out, (t,), vjp)


def max_with_scalar(t: Tensor, c: float) -> Tensor:
    mask = t.data > c
    return record(np.where(mask, t.data, c), (t,), lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions


def _nonempty(t: Tensor):
    if t.size == 0:
        raise ShapeError("reduction over an empty tensor")


def _check_axis(t: Tensor, axis: int):
    if not -t.data.ndim <= axis < t.data.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.data.ndim}")


def sum_(t: Tensor) -> Tensor:
    _nonempty(t)
    return record(np.array(t.data.sum()), (t,), lambda g: (np.full(t.shape, float(g)),))


def mean(t: Tensor) -> Tensor:
    _nonempty(t)
    n = t.size
    return record(np.array(t.data.mean()), (t,), lambda g: (np.full(t.shape, float(g) / n),))


def sum_axis(t: Tensor, axis: int) -> Tensor:
    _nonempty(t)
    _check_axis(t, axis)
    return record(
        t.data.sum(axis=axis),
        (t,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), t.shape).copy(),),
    )


def mean_axis(t: Tensor, axis: int) -> Tensor:
    _nonempty(t)
    _check_axis(t, axis)
    n = t.shape[axis]
    return record(
        t.data.mean(axis=axis),
        (t,),
        lambda g: (np.broadcast_to(np.expand_dims(g / n, axis), t.shape).copy(),),
    )


def l2_norm(t: Tensor) -> Tensor:
    _nonempty(t)
    out = np.sqrt(np.sum(t.data * t.data))

    def vjp(g):
        if out == 0:
            return (np.zeros(t.shape),)
        return (float(g) * t.data / out,)

    return record(np.array(out), (t,), vjp)


# ------------------------------------------------------------------ row-wise


def softmax_rows(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return record(p, (logits,), lambda g: (p * (g - np.sum(g * p, axis=1, keepdims=True)),))


def log_softmax_rows(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)
    return record(out, (logits,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def pick(t: Tensor, cols) -> Tensor:
    """Select ``t[i, cols[i]]`` for every row ``i``."""
    cols = np.asarray(cols, dtype=np.intp)
    if t.data.ndim != 2 or cols.shape != (t.shape[0],):
        raise ShapeError(f"pick needs {t.shape[0]} column indices for shape {t.shape}")
    rows = np.arange(t.shape[0])

    def vjp(g):
        full = np.zeros(t.shape)
        full[rows, cols] = g
        return (full,)

    return record(t.data[rows, cols], (t,), vjp)


def row(t: Tensor, i: int) -> Tensor:
    if t.data.ndim != 2 or not -t.shape[0] <= i < t.shape[0]:
        raise ShapeError(f"row {i} out of range for shape {t.shape}")

    def vjp(g):
        full = np.zeros(t.shape)
        full[i] = g
        return (full,)

    return record(t.data[i].copy(), (t,), vjp)
