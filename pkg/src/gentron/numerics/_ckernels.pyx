# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled fixed-order matrix product.

Each output element is accumulated in double precision, sequentially over the
inner dimension. Products of two float32 values are exact in double, so the
float32 path is bitwise identical to the numpy fallback in ``_pykernels``.
"""
from libc.stdlib cimport free, malloc

ctypedef fused real:
    float
    double


def matmul_fixed(const real[:, :, ::1] a, const real[:, :, ::1] b, real[:, :, ::1] out):
    cdef Py_ssize_t nb = a.shape[0]
    cdef Py_ssize_t m = a.shape[1]
    cdef Py_ssize_t k = a.shape[2]
    cdef Py_ssize_t n = b.shape[2]
    cdef Py_ssize_t s, i, p, j
    cdef double aip
    cdef const real* brow
    cdef double* acc

    if b.shape[0] != nb or b.shape[1] != k:
        raise ValueError("inner dimensions do not agree")
    if out.shape[0] != nb or out.shape[1] != m or out.shape[2] != n:
        raise ValueError("output buffer has the wrong shape")
    if n == 0 or m == 0 or nb == 0:
        return

    acc = <double*>malloc(n * sizeof(double))
    if acc == NULL:
        raise MemoryError()
    try:
        with nogil:
            for s in range(nb):
                for i in range(m):
                    for j in range(n):
                        acc[j] = 0.0
                    for p in range(k):
                        aip = a[s, i, p]
                        brow = &b[s, p, 0]
                        for j in range(n):
                            acc[j] = acc[j] + aip * <double>brow[j]
                    for j in range(n):
                        out[s, i, j] = <real>acc[j]
    finally:
        free(acc)
