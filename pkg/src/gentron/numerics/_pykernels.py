"""Pure-numpy fallback for the compiled kernels.

Must stay bitwise identical to ``_ckernels.matmul_fixed``: double accumulator,
sequential over the inner dimension, one rounding per multiply and per add.
"""
import numpy as np


def matmul_fixed(a, b, out):
    nb, m, k = a.shape
    if b.shape[0] != nb or b.shape[1] != k:
        raise ValueError("inner dimensions do not agree")
    n = b.shape[2]
    if out.shape != (nb, m, n):
        raise ValueError("output buffer has the wrong shape")
    a64 = a.astype(np.float64, copy=False)
    b64 = b.astype(np.float64, copy=False)
    acc = np.zeros((nb, m, n), dtype=np.float64)
    tmp = np.empty_like(acc)
    for p in range(k):
        np.multiply(a64[:, :, p, None], b64[:, None, p, :], out=tmp)
        acc += tmp
    out[...] = acc
