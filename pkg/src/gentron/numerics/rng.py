"""Deterministic, platform-independent random numbers.

The generator is counter-based SplitMix64: draw ``i`` of a stream with key
``k`` is ``mix(k + (i + 1) * GOLDEN)``, so generating a block of values is a
single vectorised numpy expression and the stream depends on nothing but the
seed. Uniform floats take the top 53 bits; normals use the Box-Muller
transform on consecutive uniform pairs (cosine branch first, then sine).
"""
import zlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(value):
    return int(_mix(np.array([value & _MASK64], dtype=np.uint64))[0])


class Rng:
    """Seeded random stream.

    ``fork(label)`` derives an independent stream keyed by ``label`` without
    consuming draws from the parent, which keeps e.g. timestep and noise
    streams stable when one of them changes length.
    """

    def __init__(self, seed=0):
        self.seed = int(seed) & _MASK64
        self._key = _mix_int(self.seed ^ 0x6A09E667F3BCC909)
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def fork(self, label):
        tag = zlib.crc32(str(label).encode("utf-8"))
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._key = _mix_int(self._key ^ _mix_int((tag << 1) | 1))
        child.counter = 0
        return child

    def next_u64(self, n):
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self._key) + idx * _GOLDEN)

    def uniform(self, shape=(), low=0.0, high=1.0):
        """Float64 uniforms on [low, high)."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        if low != 0.0 or high != 1.0:
            u = low + (high - low) * u
        return u.reshape(shape)

    def random(self):
        return float(self.uniform(1)[0])

    def normal(self, shape=()):
        """Float64 standard normals via Box-Muller."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u lies in (0, 1]
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)
        return z[:n].reshape(shape)

    def integers(self, low, high, shape=()):
        """Uniform integers on [low, high) by scaling 53-bit uniforms."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(shape)
        return (low + np.floor(u * (high - low))).astype(np.int64)

    def permutation(self, n):
        return np.argsort(self.uniform(n), kind="stable")


def _as_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def randn(rng, shape, dtype=np.float32):
    """Standard-normal Tensor drawn from ``rng``."""
    from gentron.numerics.tensor import Tensor

    return Tensor(rng.normal(shape).astype(dtype))
