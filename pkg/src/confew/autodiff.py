"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced: every op
attaches a backward closure and the list of parents that still need
gradients.  ``Tensor.backward()`` walks the graph once in reverse
topological order.  Nodes whose inputs are all constants carry no closure
at all, so eval-mode forward passes build no graph.

Only float64 data is supported.  Integer index arrays (token ids, marker
positions, labels) are passed around as plain numpy arrays.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Node in the autodiff graph holding a float64 array."""

    # keep numpy from hijacking reflected operators like ndarray + Tensor
    __array_ufunc__ = None
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- bookkeeping --------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar node."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        out = self.data[key]

        def bw(g, t=self, key=key):
            full = np.zeros_like(t.data)
            full[key] = g  # basic (slice) indexing only: no repeated positions
            t.accumulate(full)

        return _node(out, (self,), bw)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    grads_needed = tuple(p for p in parents if p.requires_grad)
    if grads_needed:
        out.requires_grad = True
        out._parents = grads_needed
        out._backward = backward
    return out


# -- elementwise ops -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(a.data / b.data, (a, b), bw)


def power(t, p: float) -> Tensor:
    """Elementwise t**p for a float exponent."""
    t = _as_tensor(t)
    p = float(p)

    def bw(g):
        t.accumulate(g * p * np.power(t.data, p - 1.0))

    return _node(np.power(t.data, p), (t,), bw)


def exp(t) -> Tensor:
    t = _as_tensor(t)
    out_data = np.exp(t.data)

    def bw(g):
        t.accumulate(g * out_data)

    return _node(out_data, (t,), bw)


def log(t) -> Tensor:
    t = _as_tensor(t)

    def bw(g):
        t.accumulate(g / t.data)

    return _node(np.log(t.data), (t,), bw)


def sqrt(t) -> Tensor:
    t = _as_tensor(t)
    out_data = np.sqrt(t.data)

    def bw(g):
        t.accumulate(g * 0.5 / out_data)

    return _node(out_data, (t,), bw)


def tanh(t) -> Tensor:
    t = _as_tensor(t)
    out_data = np.tanh(t.data)

    def bw(g):
        t.accumulate(g * (1.0 - out_data * out_data))

    return _node(out_data, (t,), bw)


def relu(t) -> Tensor:
    """max(t, 0) with subgradient 0 at exactly 0."""
    t = _as_tensor(t)

    def bw(g):
        t.accumulate(g * (t.data > 0.0))

    return _node(np.maximum(t.data, 0.0), (t,), bw)


# -- linear algebra and shape ops ------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a.accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b.accumulate(_unbroadcast(gb, b.data.shape))

    return _node(a.data @ b.data, (a, b), bw)


def reshape(t, shape) -> Tensor:
    t = _as_tensor(t)

    def bw(g):
        t.accumulate(g.reshape(t.data.shape))

    return _node(t.data.reshape(shape), (t,), bw)


def transpose(t, axes) -> Tensor:
    t = _as_tensor(t)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        t.accumulate(g.transpose(inverse))

    return _node(t.data.transpose(axes), (t,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def sum_(t, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)

    def bw(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        t.accumulate(np.broadcast_to(gg, t.data.shape))

    return _node(t.data.sum(axis=axis, keepdims=keepdims), (t,), bw)


def mean(t, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    if axis is None:
        count = t.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([t.data.shape[a] for a in axes]))
    return sum_(t, axis=axis, keepdims=keepdims) * (1.0 / count)


def take_rows(t, idx: np.ndarray) -> Tensor:
    """Fancy-index the leading axis; repeated indices add in backward."""
    t = _as_tensor(t)
    idx = np.asarray(idx)

    def bw(g):
        full = np.zeros_like(t.data)
        np.add.at(full, idx, g)
        t.accumulate(full)

    return _node(t.data[idx], (t,), bw)


def gather_positions(t, pos: np.ndarray) -> Tensor:
    """Select t[b, pos[b]] for every batch row b."""
    t = _as_tensor(t)
    pos = np.asarray(pos)
    rows = np.arange(t.data.shape[0])

    def bw(g):
        full = np.zeros_like(t.data)
        np.add.at(full, (rows, pos), g)
        t.accumulate(full)

    return _node(t.data[rows, pos], (t,), bw)


def stop_gradient(t) -> Tensor:
    """Detach: same values, no graph edge."""
    return Tensor(_as_tensor(t).data)


# -- numerically stable composites -----------------------------------


def softmax(t, axis: int = -1) -> Tensor:
    """Stable softmax; the max shift is treated as a constant (exact, since
    softmax is shift invariant)."""
    t = _as_tensor(t)
    shift = np.max(t.data, axis=axis, keepdims=True)
    e = exp(t - shift)
    return e / sum_(e, axis=axis, keepdims=True)


def logsumexp(t, axis: int = -1, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    shift = np.max(t.data, axis=axis, keepdims=True)
    out = log(sum_(exp(t - shift), axis=axis, keepdims=True)) + shift
    if keepdims:
        return out
    return reshape(out, np.squeeze(out.data, axis=axis).shape)
