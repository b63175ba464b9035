"""Minimal reverse-mode autodiff over dense numpy arrays.

Every op returns a new :class:`Tensor`; when any input requires a gradient
the output remembers its parents and a closure mapping the output gradient
to parent gradients. Those links form the tape: :meth:`Tensor.backward`
orders it topologically and visits each node once in reverse.

Ops accept a leading batch axis wherever the layer semantics allow one, so
a whole mini-batch goes through a single tape.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={list(self.shape)}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Populate ``.grad`` on every tensor upstream of this scalar."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar root, got shape {list(self.shape)}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        pending = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _tracks(parent):
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # operator sugar for small composite graphs (tests, losses)
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _tracks(t):
    return t.requires_grad or t._backward is not None


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen and _tracks(p):
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _result(data, parents, backward):
    out = Tensor(data)
    if any(_tracks(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise and structural ops

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0] or b.ndim != 2:
        raise ShapeError(f"matmul shapes {list(a.shape)} and {list(b.shape)} do not align")

    def back(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _result(a.data @ b.data, (a, b), back)


def reshape(x, shape):
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def flatten(x, start_axis=1):
    """Collapse every axis from ``start_axis`` on, row-major."""
    x = as_tensor(x)
    return reshape(x, x.shape[:start_axis] + (-1,))


def sum(x, axis=None, keepdims=False):  # noqa: A001
    x = as_tensor(x)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), back)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _result(x.data.mean(axis=axis, keepdims=keepdims), (x,), back)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1 - y * y),))


def log(x):
    x = as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def softmax(x, axis=-1):
    """Max-shifted softmax, stable for any finite input."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (x,), back)


def dropout(x, rate=0.3, training=False, rng=None):
    """Inverted dropout: survivors are scaled by ``1/(1-rate)``."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# layers

def dense(x, W, b):
    """Affine map ``y = W x + b`` over the last axis of ``x``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense: x {list(x.shape)}, W {list(W.shape)}, b {list(b.shape)} are incompatible")
    y = x.data @ W.data.T + b.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ W.data if _tracks(x) else None
        gW = g2.T @ x.data.reshape(-1, x.shape[-1]) if _tracks(W) else None
        return gx, gW, g2.sum(axis=0)

    return _result(y, (x, W, b), back)


def conv_geometry(n, k, s, padding):
    """Return ``(output length, leading pad)`` along one axis."""
    if padding == "same":
        out = -(-n // s)
        total = max((out - 1) * s + k - n, 0)
        return out, total // 2  # odd totals put the extra zero at the end
    if padding == "valid":
        if k > n:
            raise ShapeError(f"kernel extent {k} exceeds input extent {n}")
        return (n - k) // s + 1, 0
    raise ConfigError(f"unknown padding {padding!r}")


def conv2d(x, kernels_, bias=None, stride=(1, 1), padding="same"):
    """2-D cross-correlation of ``x[B,H,W,Cin]`` with ``k[kh,kw,Cin,Cout]``.

    An unbatched ``[H,W,Cin]`` input yields an unbatched output.
    """
    x, k = as_tensor(x), as_tensor(kernels_)
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ConfigError(f"stride components must be >= 1, got {list(stride)}")
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or k.ndim != 4 or k.shape[2] != x.shape[3]:
        raise ShapeError(f"conv2d: input {list(x.shape)} incompatible with kernels {list(k.shape)}")
    H, W = x.shape[1], x.shape[2]
    kh, kw = k.shape[0], k.shape[1]
    ho, ph = conv_geometry(H, kh, sh, padding)
    wo, pw = conv_geometry(W, kw, sw, padding)
    xd = np.ascontiguousarray(x.data)
    kd = np.ascontiguousarray(k.data, dtype=xd.dtype)
    y = kernels.conv2d_forward(xd, kd, sh, sw, ph, pw, ho, wo)

    def back(g):
        gx, gk = kernels.conv2d_backward(xd, kd, np.ascontiguousarray(g, dtype=xd.dtype), sh, sw, ph, pw)
        return gx, gk

    out = _result(y, (x, k), back)
    if bias is not None:
        out = add(out, bias)
    if unbatched:
        out = reshape(out, out.shape[1:])
    return out


def maxpool(x, window=(1, 2), stride=(1, 2)):
    """Max pooling with no padding; gradient goes to the first maximum."""
    x = as_tensor(x)
    kh, kw = window
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ConfigError(f"stride components must be >= 1, got {list(stride)}")
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    H, W = x.shape[1], x.shape[2]
    if kh > H or kw > W:
        raise ShapeError(f"pool window {list(window)} exceeds input extent {[H, W]}")
    xd = np.ascontiguousarray(x.data)
    y, idx = kernels.maxpool_forward(xd, kh, kw, sh, sw)

    def back(g):
        return (kernels.maxpool_backward(np.ascontiguousarray(g, dtype=xd.dtype), idx, H, W),)

    out = _result(y, (x,), back)
    if unbatched:
        out = reshape(out, out.shape[1:])
    return out


# losses over probability rows

def binary_cross_entropy(p, target, eps=1e-7):
    """Mean over classes and batch of per-class BCE against ``target``.

    Probabilities are clamped to ``[eps, 1-eps]``; the clamp passes no
    gradient where it is active.
    """
    p = as_tensor(p)
    y = np.asarray(target, dtype=p.dtype)
    pc = np.clip(p.data, eps, 1 - eps)
    n = p.data.size
    loss = -(y * np.log(pc) + (1 - y) * np.log(1 - pc)).sum() / n
    inside = (p.data >= eps) & (p.data <= 1 - eps)

    def back(g):
        return (g * inside * (-(y / pc) + (1 - y) / (1 - pc)) / n,)

    return _result(np.asarray(loss, dtype=p.dtype), (p,), back)


def categorical_cross_entropy(p, target, eps=1e-7):
    p = as_tensor(p)
    y = np.asarray(target, dtype=p.dtype)
    pc = np.clip(p.data, eps, 1 - eps)
    rows = p.data.size // p.shape[-1]
    loss = -(y * np.log(pc)).sum() / rows
    inside = (p.data >= eps) & (p.data <= 1 - eps)
    return _result(np.asarray(loss, dtype=p.dtype), (p,),
                   lambda g: (g * inside * -(y / pc) / rows,))
