"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations the SARD network, the synthetic-data MLP and the losses
need are provided.  Every op records a closure that maps the output gradient
onto its inputs; ``Tensor.backward`` walks the graph in reverse topological
order.  Broadcasting follows numpy and gradients are summed back down to the
operand shapes.
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    # sum out leading axes added by broadcasting, then axes that were size 1
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(x):
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def neg(a):
    out = Tensor(-a.data, (a,))
    out._backward = lambda g: a._accumulate(-g)
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def matmul(a, b):
    """Batched matmul with numpy broadcasting over leading axes (ndim >= 2)."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(np.matmul(a.data, b.data), (a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    out._backward = backward
    return out


def spmm(sparse, b):
    """``sparse @ b`` for a constant scipy sparse matrix and a 2-D tensor."""
    out = Tensor(np.asarray(sparse @ b.data), (b,))

    def backward(g):
        b._accumulate(np.asarray(sparse.T @ g))

    out._backward = backward
    return out


def tsum(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    out._backward = backward
    return out


def mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def exp(a):
    val = np.exp(a.data)
    out = Tensor(val, (a,))
    out._backward = lambda g: a._accumulate(g * val)
    return out


def log(a):
    out = Tensor(np.log(a.data), (a,))
    out._backward = lambda g: a._accumulate(g / a.data)
    return out


def sigmoid_np(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    val = sigmoid_np(a.data)
    out = Tensor(val, (a,))
    out._backward = lambda g: a._accumulate(g * val * (1.0 - val))
    return out


def tanh(a):
    val = np.tanh(a.data)
    out = Tensor(val, (a,))
    out._backward = lambda g: a._accumulate(g * (1.0 - val * val))
    return out


def relu(a):
    pos = a.data > 0
    out = Tensor(np.where(pos, a.data, 0.0), (a,))
    out._backward = lambda g: a._accumulate(g * pos)
    return out


def clip(a, lo, hi):
    inside = (a.data >= lo) & (a.data <= hi)
    out = Tensor(np.clip(a.data, lo, hi), (a,))
    out._backward = lambda g: a._accumulate(g * inside)
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), (a,))
    out._backward = lambda g: a._accumulate(g.reshape(a.shape))
    return out


def transpose(a, axes=None):
    out = Tensor(np.transpose(a.data, axes), (a,))
    inv = None if axes is None else np.argsort(axes)
    out._backward = lambda g: a._accumulate(np.transpose(g, inv))
    return out


def take(a, idx):
    out = Tensor(a.data[idx], (a,))

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    out._backward = backward
    return out


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    out._backward = backward
    return out


def masked_softmax(a, mask, axis=-1):
    """Softmax along ``axis`` restricted to entries where ``mask`` is true.

    Masked entries get exactly zero weight.  Slices with no true entry come out
    all-zero instead of NaN.
    """
    mask = np.broadcast_to(mask, a.shape)
    z = np.where(mask, a.data, -np.inf)
    zmax = z.max(axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    e = np.where(mask, np.exp(z - zmax), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    val = e / np.where(denom > 0, denom, 1.0)
    out = Tensor(val, (a,))

    def backward(g):
        dot = (g * val).sum(axis=axis, keepdims=True)
        a._accumulate(val * (g - dot))

    out._backward = backward
    return out


def masked_max(a, mask, axis):
    """Max over ``axis`` ignoring masked-out entries.

    Returns the tensor of maxima and the integer argmax (first occurrence wins
    on ties).  The subgradient routes entirely to that argmax.
    """
    mask = np.broadcast_to(mask, a.shape)
    z = np.where(mask, a.data, -np.inf)
    arg = np.argmax(z, axis=axis)
    val = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)
    out = Tensor(val, (a,))

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        a._accumulate(full)

    out._backward = backward
    return out, arg


def dropout(a, p, rng):
    if p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return mul(a, keep)
