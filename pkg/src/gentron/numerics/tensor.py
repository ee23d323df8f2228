"""Dense tensors with tape-based reverse-mode differentiation.

Every op records its parents and a closure mapping the output gradient to
parent gradients; :func:`backward` replays the tape in reverse topological
order. Storage is float32 by default. Graphs built from float64 data stay in
float64, which is how gradient checks get their 64-bit shadow.
"""
import contextlib
import math
import os

import numpy as np

from gentron.errors import NumericsError, ShapeError
from gentron.numerics import kernels

_DEBUG = os.environ.get("GENTRON_DEBUG", "") not in ("", "0")
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build no tape inside the block (sampling, evaluation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    # -- metadata -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}{label})"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # -- operators ------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


# -- tape plumbing ------------------------------------------------------

def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _result(data, parents, backward):
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NumericsError("non-finite value produced by a forward op")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _swap(x):
    return np.swapaxes(x, -1, -2)


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if grad is None:
        if loss.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# -- elementwise --------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = _pair(a, b)

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result(a.data / b.data, (a, b), bw)


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    exponent = float(exponent)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _result(a.data ** exponent, (a,), bw)


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    with np.errstate(over="ignore"):
        pos = 1.0 / (1.0 + np.exp(-x))
        neg_ = np.exp(x) / (1.0 + np.exp(x))
    return np.where(x >= 0, pos, neg_).astype(x.dtype, copy=False)


def silu(a):
    s = _sigmoid(a.data)
    return _result(a.data * s, (a,), lambda g: (g * s * (1.0 + a.data * (1.0 - s)),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh approximation."""
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))

    def bw(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _result(0.5 * x * (1.0 + t), (a,), bw)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# -- shape ops ----------------------------------------------------------

def reshape(a, shape):
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, key):
    if isinstance(key, Tensor):
        key = key.data
    basic = _is_basic_index(key)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _result(a.data[key], (a,), bw)


def _is_basic_index(key):
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in items)


def take(a, indices):
    """Gather rows ``a[indices]`` along axis 0 (embedding lookup)."""
    idx = np.asarray(indices, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of an empty list")

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


# -- reductions ---------------------------------------------------------

def _expand_like(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        return (np.array(_expand_like(g, a.shape, axis, keepdims)),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), bw)


def mean(a, axis=None, keepdims=False):
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size // max(np.asarray(out).size, 1)

    def bw(g):
        return (np.array(_expand_like(g, a.shape, axis, keepdims)) / count,)

    return _result(np.asarray(out, dtype=a.dtype), (a,), bw)


# -- linear algebra -----------------------------------------------------

def matmul(a, b):
    """Matrix product through the fixed-order kernel, with batch broadcasting."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(kernels.matmul(g, _swap(b.data)), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = kernels.matmul(a.data.reshape(-1, k).T, g.reshape(-1, n))
            else:
                gb = _unbroadcast(kernels.matmul(_swap(a.data), g), b.shape)
        return ga, gb

    return _result(kernels.matmul(a.data, b.data), (a, b), bw)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = matmul(x, weight)
    return y + bias if bias is not None else y


# -- normalisation / attention ------------------------------------------

def _softmax_np(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(a, axis=-1):
    out = _softmax_np(a.data, axis)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, (a,), bw)


def layer_norm(x, gamma=None, beta=None, eps=1e-6):
    """Normalise over the last axis; constant rows normalise to exactly 0."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    width = x.shape[-1]
    for p, label in ((gamma, "gamma"), (beta, "beta")):
        if p is not None and tuple(p.shape) != (width,):
            raise ShapeError(f"layer_norm {label} must have shape ({width},), got {p.shape}")
    xd = x.data
    centred = xd - np.mean(xd, axis=-1, keepdims=True)
    constant = np.max(xd, axis=-1, keepdims=True) == np.min(xd, axis=-1, keepdims=True)
    centred = np.where(constant, 0.0, centred).astype(xd.dtype, copy=False)
    var = np.mean(centred * centred, axis=-1, keepdims=True)
    rstd = (1.0 / np.sqrt(var + eps)).astype(xd.dtype, copy=False)
    xhat = centred * rstd
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def bw(g):
        gx_hat = g * gamma.data if gamma is not None else g
        gx = rstd * (
            gx_hat
            - np.mean(gx_hat, axis=-1, keepdims=True)
            - xhat * np.mean(gx_hat * xhat, axis=-1, keepdims=True)
        )
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).reshape(-1, width).sum(axis=0))
        if beta is not None:
            grads.append(g.reshape(-1, width).sum(axis=0))
        return tuple(grads)

    return _result(out, parents, bw)


def _mask_array(mask):
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if m.dtype != np.bool_:
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("attention mask entries must be 0 or 1")
        m = m != 0
    return m


def attention(q, k, v, mask=None):
    """Scaled dot-product attention ``softmax(q k^T / sqrt(d) + log mask) v``.

    ``mask`` broadcasts against the (..., Lq, Lk) score array; zero entries
    become -inf logits. A row with no admissible key raises NumericsError.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    scale = np.asarray(1.0 / math.sqrt(q.shape[-1]), dtype=q.dtype)
    scores = kernels.matmul(q.data, _swap(k.data)) * scale
    if mask is not None:
        m = _mask_array(mask)
        m = np.broadcast_to(m, scores.shape)
        if not np.all(np.any(m, axis=-1)):
            raise NumericsError("attention mask has a fully masked row")
        scores = np.where(m, scores, -np.inf).astype(q.dtype, copy=False)
    probs = _softmax_np(scores)
    out = kernels.matmul(probs, v.data)

    def bw(g):
        gv = kernels.matmul(_swap(probs), g)
        gp = kernels.matmul(g, _swap(v.data))
        gs = probs * (gp - np.sum(gp * probs, axis=-1, keepdims=True)) * scale
        gq = kernels.matmul(gs, k.data)
        gk = kernels.matmul(_swap(gs), q.data)
        return (
            _unbroadcast(gq, q.shape),
            _unbroadcast(gk, k.shape),
            _unbroadcast(gv, v.shape),
        )

    return _result(out, (q, k, v), bw)
