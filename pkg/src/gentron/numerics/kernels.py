"""Kernel selection for the hot matrix product.

Three implementations share one contract:

``compiled``
    Cython kernel, fixed sequential accumulation order (the default when built).
``python``
    numpy fallback with the same accumulation order; bitwise equal to ``compiled``.
``fast``
    ``np.matmul`` (BLAS). Opt-in; deterministic only up to tolerance.

Set ``GENTRON_KERNELS=python`` to force the fallback at import time.
"""
import contextlib
import os

import numpy as np

from gentron.errors import ShapeError
from gentron.numerics import _pykernels

try:
    from gentron.numerics import _ckernels
except ImportError:  # extension not built
    _ckernels = None

HAVE_COMPILED = _ckernels is not None

BACKENDS = ("compiled", "python", "fast")


def _default_backend():
    forced = os.environ.get("GENTRON_KERNELS", "").strip().lower()
    if forced:
        if forced not in BACKENDS:
            raise ValueError(f"GENTRON_KERNELS must be one of {BACKENDS}, got {forced!r}")
        if forced == "compiled" and not HAVE_COMPILED:
            raise ImportError("GENTRON_KERNELS=compiled but the extension is not built")
        return forced
    return "compiled" if HAVE_COMPILED else "python"


_backend = _default_backend()


def get_backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    if name == "compiled" and not HAVE_COMPILED:
        raise ImportError("compiled kernels are not available (build the extension first)")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _matmul3(a, b):
    """(B, m, k) @ (B, k, n) through the active fixed-order kernel."""
    out = np.empty((a.shape[0], a.shape[1], b.shape[2]), dtype=a.dtype)
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    if _backend == "compiled":
        _ckernels.matmul_fixed(a, b, out)
    else:
        _pykernels.matmul_fixed(a, b, out)
    return out


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes.

    Both operands must share a floating dtype. 1-D operands are not accepted;
    reshape them to row or column matrices first.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        dtype = np.result_type(a.dtype, b.dtype)
        a, b = a.astype(dtype), b.astype(dtype)
    if a.dtype not in (np.float32, np.float64):
        a, b = a.astype(np.float64), b.astype(np.float64)
    if _backend == "fast":
        return np.matmul(a, b)

    m, k = a.shape[-2:]
    n = b.shape[-1]
    if b.ndim == 2:
        # Rows are independent, so folding the batch into m keeps results bitwise equal.
        out = _matmul3(a.reshape(1, -1, k), b.reshape(1, k, n))
        return out.reshape(a.shape[:-1] + (n,))
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    a3 = np.broadcast_to(a, batch + (m, k)).reshape(-1, m, k)
    b3 = np.broadcast_to(b, batch + (k, n)).reshape(-1, k, n)
    return _matmul3(a3, b3).reshape(batch + (m, n))
