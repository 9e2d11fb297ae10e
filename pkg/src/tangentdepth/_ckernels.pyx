# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sampling and im2col kernels; see ``_kernels_py`` for semantics."""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double

BACKEND = "cython"


def gather4(real[:, ::1] src, cnp.int64_t[:, ::1] idx, double[:, ::1] w):
    cdef Py_ssize_t c = src.shape[0], p = idx.shape[0]
    cdef Py_ssize_t ch, i
    cdef double acc
    dtype = np.float32 if real is float else np.float64
    out = np.empty((c, p), dtype=dtype)
    cdef real[:, ::1] o = out
    with nogil:
        for ch in range(c):
            for i in range(p):
                acc = (w[i, 0] * src[ch, idx[i, 0]] + w[i, 1] * src[ch, idx[i, 1]]
                       + w[i, 2] * src[ch, idx[i, 2]] + w[i, 3] * src[ch, idx[i, 3]])
                o[ch, i] = <real>acc
    return out


def scatter4(real[:, ::1] g, cnp.int64_t[:, ::1] idx, double[:, ::1] w, Py_ssize_t m):
    cdef Py_ssize_t c = g.shape[0], p = idx.shape[0]
    cdef Py_ssize_t ch, i, j
    dtype = np.float32 if real is float else np.float64
    acc = np.zeros((c, m), dtype=np.float64)
    cdef double[:, ::1] a = acc
    with nogil:
        for ch in range(c):
            for i in range(p):
                for j in range(4):
                    a[ch, idx[i, j]] += w[i, j] * g[ch, i]
    return acc.astype(dtype, copy=False)


def im2col(real[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t b = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t n, y, x, ch, i, j, col
    dtype = np.float32 if real is float else np.float64
    out = np.empty((b, ho, wo, c * k * k), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    with nogil:
        for n in range(b):
            for y in range(ho):
                for x in range(wo):
                    col = 0
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                o[n, y, x, col] = xp[n, ch, y * stride + i, x * stride + j]
                                col = col + 1
    return out


def col2im(real[:, :, :, ::1] cols, Py_ssize_t c, Py_ssize_t hp, Py_ssize_t wp,
           Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t b = cols.shape[0], ho = cols.shape[1], wo = cols.shape[2]
    cdef Py_ssize_t n, y, x, ch, i, j, col
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((b, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    with nogil:
        for n in range(b):
            for y in range(ho):
                for x in range(wo):
                    col = 0
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                o[n, ch, y * stride + i, x * stride + j] += cols[n, y, x, col]
                                col = col + 1
    return out
