"""Reverse-mode automatic differentiation over float64 NumPy arrays.

A deliberately small tape: each op builds a node holding its parents and a
closure that maps the output gradient to parent gradients. All gradients are
verified against central finite differences in the test suite, which is the
contract the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np

from kgchat import kernels


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False, _parents=(), _bwd=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._bwd = _bwd

    # -- introspection ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph --------------------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
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
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node._bwd is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._bwd(node.grad)):
                if pgrad is None:
                    continue
                if not (parent.requires_grad or parent._parents):
                    continue
                if parent.grad is None:
                    parent.grad = pgrad
                else:
                    parent.grad = parent.grad + pgrad

    # -- operators ----------------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_graph(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def _node(data, parents, bwd):
    if _needs_graph(*parents):
        return Tensor(data, _parents=tuple(parents), _bwd=bwd)
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of NumPy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic --------------------------------------------------------------

def add(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), bwd)


def sub(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), bwd)


def mul(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(out, (a, b), bwd)


def div(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data / b.data

    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _node(out, (a, b), bwd)


def matmul(a, b):
    a, b = astensor(a), astensor(b)
    out = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _node(out, (a, b), bwd)


# -- elementwise nonlinearities ----------------------------------------------

def exp(x):
    x = astensor(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x):
    x = astensor(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x):
    x = astensor(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    x = astensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x):
    x = astensor(x)
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def clamp_min(x, lo):
    """Lower clamp; gradient passes only where the input was not clamped."""
    x = astensor(x)
    mask = x.data > lo
    return _node(np.maximum(x.data, lo), (x,), lambda g: (g * mask,))


# -- reductions ---------------------------------------------------------------

def sum_(x, axis=None, keepdims=False):
    x = astensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _node(out, (x,), bwd)


def mean_(x, axis=None, keepdims=False):
    x = astensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- softmax family -----------------------------------------------------------

def softmax(x, axis=-1):
    x = astensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (x,), bwd)


def log_softmax(x, axis=-1):
    x = astensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), bwd)


# -- shape manipulation --------------------------------------------------------

def reshape(x, shape):
    x = astensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x, axes):
    x = astensor(x)
    inverse = np.argsort(axes)
    return _node(
        x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),)
    )


def concat(tensors, axis=0):
    tensors = [astensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(out, tuple(tensors), bwd)


def take(x, key):
    """Basic indexing (slices / ints); gradient scatters back into place."""
    x = astensor(x)
    out = x.data[key]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _node(out, (x,), bwd)


def gather_rows(x, ids):
    """x[ids] along axis 0 for an int array `ids`; duplicates accumulate."""
    x = astensor(x)
    ids = np.asarray(ids, dtype=np.int64)
    out = x.data[ids]

    def bwd(g):
        gx = np.zeros_like(x.data)
        kernels.scatter_add_rows(gx, ids, np.ascontiguousarray(g))
        return (gx,)

    return _node(out, (x,), bwd)


# -- structured primitives ------------------------------------------------------

def segment_sum(values, seg_ids, n_segments):
    """out[s] = sum of values[i] with seg_ids[i] == s (1-D values)."""
    values = astensor(values)
    seg_ids = np.ascontiguousarray(seg_ids, dtype=np.int64)
    out = kernels.segment_sum(np.ascontiguousarray(values.data), seg_ids, n_segments)
    return _node(out, (values,), lambda g: (g[seg_ids],))


def scatter_add_cols(weights, src_ids, n_cols):
    """out[t, src_ids[s]] += weights[t, s]; maps copy weights onto a vocabulary."""
    weights = astensor(weights)
    src_ids = np.ascontiguousarray(src_ids, dtype=np.int64)
    out = kernels.scatter_add_cols(
        np.ascontiguousarray(weights.data), src_ids, n_cols
    )
    return _node(out, (weights,), lambda g: (np.ascontiguousarray(g[:, src_ids]),))


def edge_aggregate(x, src, dst, coef, n_out):
    """out[dst[m]] += coef[m] * x[src[m]] — one relation's message passing."""
    x = astensor(x)
    src = np.ascontiguousarray(src, dtype=np.int64)
    dst = np.ascontiguousarray(dst, dtype=np.int64)
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    out = kernels.edge_aggregate(np.ascontiguousarray(x.data), src, dst, coef, n_out)

    def bwd(g):
        return (
            kernels.edge_aggregate(
                np.ascontiguousarray(g), dst, src, coef, x.data.shape[0]
            ),
        )

    return _node(out, (x,), bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis, then scale and shift."""
    x, gain, bias = astensor(x), astensor(gain), astensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xmu = x.data - mu
    var = (xmu * xmu).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xmu * ivar
    out = xhat * gain.data + bias.data
    n = x.data.shape[-1]

    def bwd(g):
        dxhat = g * gain.data
        dx = (
            ivar
            / n
            * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        )
        axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(out, (x, gain, bias), bwd)
