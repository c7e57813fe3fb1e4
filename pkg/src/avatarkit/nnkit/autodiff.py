"""Reverse-mode automatic differentiation over numpy arrays.

Each :class:`Tensor` records the op that produced it, references to its inputs
and a closure mapping the upstream gradient to one gradient per input. Calling
:meth:`Tensor.backward` sorts the graph topologically and visits every node
exactly once in reverse order. All arithmetic is float64.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    @staticmethod
    def from_op(data, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        """Create the output node of a differentiable op.

        ``backward(g)`` must return one gradient (or None) per parent.
        """
        out = Tensor(data)
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- introspection ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- backward --------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic ------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting)

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data + b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data - b.data, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)
    return Tensor.from_op(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)
    return Tensor.from_op(out, (a, b), bw, "div")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data
    return Tensor.from_op(np.where(pick_a, a.data, b.data), (a, b),
                          lambda g: (_unbroadcast(g * pick_a, a.shape),
                                     _unbroadcast(g * ~pick_a, b.shape)), "maximum")


def where(cond, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return Tensor.from_op(np.where(cond, a.data, b.data), (a, b),
                          lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                                     _unbroadcast(np.where(cond, 0.0, g), b.shape)), "where")


# ---------------------------------------------------------------------------
# elementwise unary ops

def power(a: Tensor, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return Tensor.from_op(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return Tensor.from_op(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return Tensor.from_op(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return Tensor.from_op(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return Tensor.from_op(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def relu(a) -> Tensor:
    a = as_tensor(a)
    keep = a.data > 0
    return Tensor.from_op(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.logaddexp(0.0, ad)
    return Tensor.from_op(out, (a,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * ad)),), "softplus")


def clip(a, lo=None, hi=None) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return Tensor.from_op(out, (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------------------
# reductions and shape ops

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return Tensor.from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / max(n, 1))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return Tensor.from_op(np.transpose(a.data, axes), (a,),
                          lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)
    return Tensor.from_op(a.data[idx], (a,), bw, "getitem")


def take_rows(a, index) -> Tensor:
    """``a[index]`` along axis 0 with a bincount-based scatter in backward."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def bw(g):
        return (segment_sum_np(g, index, n),)
    return Tensor.from_op(a.data[index], (a,), bw, "take_rows")


def segment_sum_np(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    flat = values.reshape(values.shape[0], -1)
    out = np.empty((n, flat.shape[1]))
    for c in range(flat.shape[1]):
        out[:, c] = np.bincount(index, weights=flat[:, c], minlength=n)
    return out.reshape((n,) + values.shape[1:])


def segment_sum(values, index, n: int) -> Tensor:
    """Sum rows of ``values`` into ``n`` buckets given by ``index``."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.int64)
    return Tensor.from_op(segment_sum_np(values.data, index, n), (values,),
                          lambda g: (g[index],), "segment_sum")


def scatter_rows(values, index, n: int) -> Tensor:
    """Place rows of ``values`` at distinct positions ``index`` of a zero array."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((n,) + values.shape[1:])
    out[index] = values.data
    return Tensor.from_op(out, (values,), lambda g: (g[index],), "scatter_rows")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))
    return Tensor.from_op(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))
    return Tensor.from_op(np.stack([t.data for t in ts], axis=axis), ts, bw, "stack")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        if gb is not None and gb.ndim > bd.ndim:
            gb = gb.sum(axis=tuple(range(gb.ndim - bd.ndim)))
        return ga, gb
    return Tensor.from_op(ad @ bd, (a, b), bw, "matmul")


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum. Every index of an operand must also appear in the other
    operand or in the output (no implicit reductions of a lone index)."""
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_s = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.einsum(f"{out_s},{sb}->{sa}", g, bd) if a.requires_grad else None
        gb = np.einsum(f"{out_s},{sa}->{sb}", g, ad) if b.requires_grad else None
        return ga, gb
    return Tensor.from_op(np.einsum(subscripts, ad, bd), (a, b), bw, "einsum")


def sparse_matmul(S: sp.spmatrix, x) -> Tensor:
    x = as_tensor(x)
    S = sp.csr_matrix(S)
    St = S.T.tocsr()
    return Tensor.from_op(S @ x.data, (x,), lambda g: (St @ g,), "sparse_matmul")


# ---------------------------------------------------------------------------
# vector helpers (last axis)

def dot(a, b, keepdims=True) -> Tensor:
    return tsum(mul(a, b), axis=-1, keepdims=keepdims)


def cross(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return (np.cross(bd, g) if a.requires_grad else None,
                np.cross(g, ad) if b.requires_grad else None)
    return Tensor.from_op(np.cross(ad, bd), (a, b), bw, "cross")


def norm(a, axis=-1, keepdims=True) -> Tensor:
    """Euclidean norm with a zero (sub)gradient at the origin."""
    a = as_tensor(a)
    ad = a.data
    n = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * ad / safe * (n > 0),)
    out = n if keepdims else np.squeeze(n, axis=axis)
    return Tensor.from_op(out, (a,), bw, "norm")


def normalize(a, axis=-1, eps: float = 1e-12) -> Tensor:
    a = as_tensor(a)
    return div(a, maximum(norm(a, axis=axis), eps))
