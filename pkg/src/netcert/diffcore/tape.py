"""Array-level reverse-mode differentiation.

A :class:`Tape` records every operation applied to its :class:`Var` nodes in
creation order; :meth:`Tape.backward` walks that list once in reverse and
accumulates adjoints. The module-level functions (``tanh``, ``relu``, ``sum``
and friends) accept either ``Var`` or plain ``numpy`` arrays, so model code
written against them runs unchanged in a fast no-gradient mode.
"""

from __future__ import annotations

import numpy as np


class TapeError(RuntimeError):
    pass


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Records one forward evaluation; supports exactly one backward pass."""

    def __init__(self):
        self._nodes: list[Var] = []
        self.consumed = False
        self.watched: dict[str, object] = {}

    def leaf(self, value, name: str | None = None) -> "Var":
        v = Var(np.asarray(value, dtype=np.float64), self)
        if name is not None:
            self.watched[name] = v
        return v

    def _record(self, value, parents, backward) -> "Var":
        if self.consumed:
            raise TapeError("tape already consumed by a backward pass")
        out = Var(value, self, parents, backward)
        self._nodes.append(out)
        return out

    def backward(self, output: "Var", upstream=None) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by a backward pass")
        if output.tape is not self:
            raise TapeError("output does not belong to this tape")
        if upstream is None:
            if output.value.size != 1:
                raise ValueError("upstream required for non-scalar output")
            upstream = np.ones_like(output.value)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != output.value.shape:
            raise ValueError(
                f"upstream shape {upstream.shape} != output shape {output.value.shape}")
        for node in self._nodes:
            node.grad = None
        for leaf in self.watched.values():
            if isinstance(leaf, Var):
                leaf.grad = None
        output.grad = upstream.copy()
        for node in reversed(self._nodes):
            if node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if parent is None or g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    parent.grad = parent.grad + g
        self.consumed = True

    def __len__(self):
        return len(self._nodes)


class Var:
    __slots__ = ("value", "grad", "tape", "_parents", "_backward")
    # make numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, tape, parents=(), backward=None):
        self.value = value
        self.tape = tape
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeError("operands recorded on different tapes")
    return tape


def add(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return np.add(a, b)
    av, bv = value_of(a), value_of(b)
    out = av + bv

    def backward(g):
        return (_unbroadcast(g, np.shape(av)) if is_var(a) else None,
                _unbroadcast(g, np.shape(bv)) if is_var(b) else None)

    return tape._record(out, (a if is_var(a) else None, b if is_var(b) else None),
                        backward)


def neg(a):
    if not is_var(a):
        return np.negative(a)
    return a.tape._record(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return np.multiply(a, b)
    av, bv = value_of(a), value_of(b)

    def backward(g):
        return (_unbroadcast(g * bv, np.shape(av)) if is_var(a) else None,
                _unbroadcast(g * av, np.shape(bv)) if is_var(b) else None)

    return tape._record(av * bv, (a if is_var(a) else None, b if is_var(b) else None),
                        backward)


def div(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return np.divide(a, b)
    av, bv = value_of(a), value_of(b)
    out = av / bv

    def backward(g):
        return (_unbroadcast(g / bv, np.shape(av)) if is_var(a) else None,
                _unbroadcast(-g * out / bv, np.shape(bv)) if is_var(b) else None)

    return tape._record(out, (a if is_var(a) else None, b if is_var(b) else None),
                        backward)


def matmul(a, b):
    """2-D matrix product (or 2-D @ 1-D)."""
    tape = _tape_of(a, b)
    if tape is None:
        return np.matmul(a, b)
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise ValueError("matmul supports (m,k)@(k,n) and (m,k)@(k,)")

    def backward(g):
        if bv.ndim == 1:
            ga = np.outer(g, bv) if is_var(a) else None
            gb = av.T @ g if is_var(b) else None
        else:
            ga = g @ bv.T if is_var(a) else None
            gb = av.T @ g if is_var(b) else None
        return ga, gb

    return tape._record(av @ bv, (a if is_var(a) else None, b if is_var(b) else None),
                        backward)


def transpose(a):
    if not is_var(a):
        return np.transpose(a)
    return a.tape._record(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    if not is_var(a):
        return np.reshape(a, shape)
    old = a.value.shape
    return a.tape._record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tanh(a):
    if not is_var(a):
        return np.tanh(a)
    y = np.tanh(a.value)
    return a.tape._record(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a):
    """ReLU with subgradient 0 at exactly 0."""
    if not is_var(a):
        return np.maximum(a, 0.0)
    mask = a.value > 0
    return a.tape._record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    if not is_var(a):
        return _sigmoid(np.asarray(a, dtype=np.float64))
    y = _sigmoid(a.value)
    return a.tape._record(y, (a,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(x):
    # branch-free and overflow-safe
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def absolute(a):
    if not is_var(a):
        return np.abs(a)
    s = np.sign(a.value)
    return a.tape._record(np.abs(a.value), (a,), lambda g: (g * s,))


def square(a):
    if not is_var(a):
        return np.square(a)
    x = a.value
    return a.tape._record(x * x, (a,), lambda g: (2.0 * x * g,))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    if not is_var(a):
        return np.sum(a, axis=axis, keepdims=keepdims)
    shape = a.value.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return a.tape._record(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = value_of(a).size if axis is None else np.prod(
        [value_of(a).shape[ax] for ax in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def max(a, axis):  # noqa: A001 - mirrors numpy
    """Max along one axis; the gradient goes to the first maximizer."""
    if not is_var(a):
        return np.max(a, axis=axis)
    x = a.value
    idx = np.argmax(x, axis=axis)
    out = np.take_along_axis(x, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(x)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis),
                          axis=axis)
        return (full,)

    return a.tape._record(out, (a,), backward)


def take(a, idx):
    """Basic/advanced indexing ``a[idx]`` with scatter-add adjoint."""
    if not is_var(a):
        return np.asarray(a)[idx]
    x = a.value

    def backward(g):
        full = np.zeros_like(x)
        np.add.at(full, idx, g)
        return (full,)

    return a.tape._record(x[idx], (a,), backward)


def concat(parts, axis=0):
    tape = _tape_of(*parts)
    if tape is None:
        return np.concatenate(parts, axis=axis)
    vals = [value_of(p) for p in parts]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        chunks = np.split(g, sizes, axis=axis)
        return tuple(c if is_var(p) else None for p, c in zip(parts, chunks))

    return tape._record(np.concatenate(vals, axis=axis),
                        tuple(p if is_var(p) else None for p in parts), backward)


def stack(parts, axis=0):
    parts = [expand_dims(p, axis) for p in parts]
    return concat(parts, axis=axis)


def expand_dims(a, axis):
    if not is_var(a):
        return np.expand_dims(a, axis)
    return reshape(a, np.expand_dims(a.value, axis).shape)
