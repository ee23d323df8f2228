"""Parameter containers and the attention/MLP layers shared by the T2I and T2V models.

Linear weights are stored as (in, out). Modules built with a ``meta`` factory
hold zero-stride placeholder arrays: shapes are real, memory is O(1). That is
how the billion-parameter presets are constructed and counted.
"""
import numpy as np

from gentron.numerics.rng import Rng
from gentron.numerics.tensor import (
    Tensor,
    attention,
    gelu,
    layer_norm,
    linear,
)


class ParamFactory:
    """Allocates and initialises parameters from one seeded stream."""

    def __init__(self, rng=None, meta=False, dtype=np.float32):
        self.rng = rng if rng is not None else Rng(0)
        self.meta = meta
        self.dtype = dtype

    def make(self, shape, init="zeros"):
        shape = tuple(int(s) for s in shape)
        if self.meta:
            return Tensor(np.broadcast_to(np.zeros((), dtype=self.dtype), shape), requires_grad=True)
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "xavier":
            fan_in, fan_out = shape[0], shape[-1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(shape, -bound, bound)
        elif isinstance(init, tuple) and init[0] == "normal":
            data = init[1] * self.rng.normal(shape)
        else:
            raise ValueError(f"unknown initialiser {init!r}")
        return Tensor(data.astype(self.dtype), requires_grad=True)


class Module:
    """Ordered registry of parameters and child modules."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._children[name] = value
            self._params.pop(name, None)
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
            self._children.pop(name, None)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype):
        """Re-store every parameter in ``dtype``, in place (tensor identity is kept)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    @property
    def dtype(self):
        for p in self.parameters():
            return p.dtype
        return np.dtype(np.float32)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


class Linear(Module):
    def __init__(self, f, d_in, d_out, init="xavier"):
        super().__init__()
        self.weight = f.make((d_in, d_out), init)
        self.bias = f.make((d_out,), "zeros")

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


def split_heads(x, heads):
    n, length, width = x.shape
    return x.reshape(n, length, heads, width // heads).transpose(0, 2, 1, 3)


def merge_heads(x):
    n, heads, length, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, length, heads * dh)


class SelfAttention(Module):
    """Multi-head self-attention over axis 1 of an (N, L, width) input."""

    def __init__(self, f, width, heads, out_init="xavier"):
        super().__init__()
        self.heads = heads
        self.qkv = Linear(f, width, 3 * width)
        self.proj = Linear(f, width, width, init=out_init)

    def __call__(self, x, mask=None):
        n, length, width = x.shape
        dh = width // self.heads
        qkv = self.qkv(x).reshape(n, length, 3, self.heads, dh).transpose(2, 0, 3, 1, 4)
        out = attention(qkv[0], qkv[1], qkv[2], mask)
        return self.proj(merge_heads(out))


class CrossAttention(Module):
    """Image tokens query, text tokens supply keys and values."""

    def __init__(self, f, width, d_text, heads):
        super().__init__()
        self.heads = heads
        self.q = Linear(f, width, width)
        self.kv = Linear(f, d_text, 2 * width)
        self.proj = Linear(f, width, width, init="zeros")

    def __call__(self, x, ctx, key_mask=None):
        n, length, width = x.shape
        lk = ctx.shape[1]
        dh = width // self.heads
        q = split_heads(self.q(x), self.heads)
        kv = self.kv(ctx).reshape(n, lk, 2, self.heads, dh).transpose(2, 0, 3, 1, 4)
        mask = None if key_mask is None else key_mask[:, None, None, :]
        out = attention(q, kv[0], kv[1], mask)
        return self.proj(merge_heads(out))


class Mlp(Module):
    def __init__(self, f, width, hidden):
        super().__init__()
        self.fc1 = Linear(f, width, hidden)
        self.fc2 = Linear(f, hidden, width)

    def __call__(self, x):
        return self.fc2(gelu(self.fc1(x)))


def modulate(h, shift, scale):
    """h·(1 + scale) + shift, per-sample vectors broadcast over tokens."""
    return h * (scale + 1.0) + shift


def plain_layer_norm(x):
    return layer_norm(x, None, None, eps=1e-6)
