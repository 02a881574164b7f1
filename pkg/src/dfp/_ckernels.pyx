# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the dense convolution kernels.

Callers are expected to pass C-contiguous float64 arrays with validated
shapes; dfp.numerics is the only intended entry point.
"""

import numpy as np


def conv_valid(double[:, :, ::1] x, double[:, :, ::1] f):
    cdef Py_ssize_t hx = x.shape[0], wx = x.shape[1], c = x.shape[2]
    cdef Py_ssize_t kh = f.shape[0], kw = f.shape[1]
    cdef Py_ssize_t ho = hx - kh + 1, wo = wx - kw + 1
    out = np.empty((ho, wo))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, u, v, k
    cdef double acc
    with nogil:
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for u in range(kh):
                    for v in range(kw):
                        for k in range(c):
                            acc += x[i + u, j + v, k] * f[u, v, k]
                o[i, j] = acc
    return out


def conv_transpose(double[:, :, ::1] x, double[:, ::1] g, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t c = x.shape[2]
    cdef Py_ssize_t ho = g.shape[0], wo = g.shape[1]
    out = np.zeros((kh, kw, c))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t i, j, u, v, k
    cdef double gij
    with nogil:
        for i in range(ho):
            for j in range(wo):
                gij = g[i, j]
                if gij == 0.0:
                    continue
                for u in range(kh):
                    for v in range(kw):
                        for k in range(c):
                            o[u, v, k] += x[i + u, j + v, k] * gij
    return out


def conv_valid_many(double[:, :, :, ::1] xs, double[:, :, ::1] f):
    cdef Py_ssize_t n = xs.shape[0], hx = xs.shape[1], wx = xs.shape[2], c = xs.shape[3]
    cdef Py_ssize_t kh = f.shape[0], kw = f.shape[1]
    cdef Py_ssize_t ho = hx - kh + 1, wo = wx - kw + 1
    out = np.empty((n, ho, wo))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, i, j, u, v, k
    cdef double acc
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for u in range(kh):
                        for v in range(kw):
                            for k in range(c):
                                acc += xs[b, i + u, j + v, k] * f[u, v, k]
                    o[b, i, j] = acc
    return out


def conv_transpose_acc(double[:, :, :, ::1] xs, double[:, :, ::1] gs,
                       double[::1] coeffs, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t n = xs.shape[0], c = xs.shape[3]
    cdef Py_ssize_t ho = gs.shape[1], wo = gs.shape[2]
    out = np.zeros((kh, kw, c))
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, i, j, u, v, k
    cdef double gij
    with nogil:
        for b in range(n):
            for i in range(ho):
                for j in range(wo):
                    gij = gs[b, i, j] * coeffs[b]
                    if gij == 0.0:
                        continue
                    for u in range(kh):
                        for v in range(kw):
                            for k in range(c):
                                o[u, v, k] += xs[b, i + u, j + v, k] * gij
    return out
