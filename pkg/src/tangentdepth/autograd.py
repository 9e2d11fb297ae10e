"""A small reverse-mode autodiff engine over numpy arrays.

Every op builds a node holding its output data, its parents and a closure
mapping the output gradient to parent gradients. :func:`backward` walks the
graph once in reverse topological order, accumulates ``.grad`` on leaves
that require it, then frees the graph; a second backward over a freed graph
raises :class:`GraphConsumedError`.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import kernels

DEBUG = os.environ.get("TANGENTDEPTH_DEBUG", "") not in ("", "0")
_grad_enabled = True


@contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class GraphConsumedError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_freed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._freed = False

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def make_node(data, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result. ``backward_fn(grad)`` returns one gradient (or None)
    per parent, in order."""
    if DEBUG and not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite values produced by an op")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._freed:
            raise GraphConsumedError("backward called twice through the same graph")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf's ``.grad``."""
    if loss._freed:
        raise GraphConsumedError("backward called twice through the same graph")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    if grad is None:
        if loss.data.size != 1:
            raise ValueError("implicit gradient needs a scalar loss")
        grad = np.ones_like(loss.data)
    order = _toposort(loss)
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if node.requires_grad and g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._freed = True
    loss._freed = True


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    return make_node(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        gb = g / bd
        return _unbroadcast(gb, ad.shape), _unbroadcast(-gb * out, bd.shape)

    return make_node(out, (a, b), bw)


def maximum(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) with a constant floor; zero gradient where clamped."""
    keep = a.data > floor
    return make_node(np.where(keep, a.data, a.dtype.type(floor)), (a,), lambda g: (g * keep,))


def where(cond, a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return make_node(
        np.where(cond, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0), sa), _unbroadcast(np.where(cond, 0, g), sb)),
    )


def _sigmoid(x):
    # tanh form is overflow-free
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return make_node(y, (x,), lambda g: (g * y * (1 - y),))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    xd = x.data
    return make_node(xd * s, (x,), lambda g: (g * (s * (1 + xd * (1 - s))),))


def softplus(x: Tensor) -> Tensor:
    y = np.logaddexp(0, x.data).astype(x.dtype, copy=False)
    s = _sigmoid(x.data)
    return make_node(y, (x,), lambda g: (g * s,))


# -- shape ---------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return make_node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, key) -> Tensor:
    shape, dtype = x.shape, x.dtype

    keys = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(k, (slice, int)) or k is Ellipsis for k in keys)

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        if basic:
            out[key] = g
        else:
            np.add.at(out, key, g)
        return (out,)

    return make_node(x.data[key], (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make_node(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


# -- linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_node(ad @ bd, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b), w stored (in, out)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return make_node(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        dxhat = g * gd
        dx = inv * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_node(xhat * gd + bias.data, (x, gain, bias), bw)


# -- image ops -----------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation over NCHW input with an (out, in, k, k) kernel."""
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {ci} (k={k}x{k2})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hp, wp = xp.shape[2:]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = kernels.im2col(xp, k, stride, ho, wo).reshape(-1, c * k * k)
    wm = w.data.reshape(o, -1)
    out = cols @ wm.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def bw(g):
        go = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (go.T @ cols).reshape(w.shape)
        dcols = (go @ wm).reshape(n, ho, wo, c * k * k)
        dxp = kernels.col2im(dcols, c, hp, wp, k, stride)
        dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
        gb = go.sum(axis=0) if b is not None else None
        return (dx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, bw)


def resize_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """1-D linear interpolation matrix, half-pixel (align_corners=False) convention."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m.astype(dtype)


def bilinear_up(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling of an NCHW tensor by an integer factor."""
    h, w = x.shape[-2:]
    my = resize_matrix(h, h * factor, x.dtype)
    mx = resize_matrix(w, w * factor, x.dtype)
    out = my @ x.data @ mx.T
    return make_node(out, (x,), lambda g: (my.T @ g @ mx,))


def sample(x: Tensor, idx: np.ndarray, w: np.ndarray) -> Tensor:
    """Four-tap weighted gather along the last axis of a (C, M) tensor."""
    m = x.shape[-1]
    return make_node(kernels.gather4(x.data, idx, w), (x,), lambda g: (kernels.scatter4(g, idx, w, m),))
