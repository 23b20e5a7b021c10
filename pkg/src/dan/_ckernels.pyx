# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``. Same signatures."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def unfold(const double[:, :, ::1] x, Py_ssize_t window):
    cdef Py_ssize_t b = x.shape[0], length = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t steps = length - window + 1
    out_arr = np.empty((b, steps, window * d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, t, j, c
    with nogil:
        for i in range(b):
            for t in range(steps):
                for j in range(window):
                    for c in range(d):
                        out[i, t, j * d + c] = x[i, t + j, c]
    return out_arr


def fold(const double[:, :, ::1] grad, Py_ssize_t window, Py_ssize_t length):
    cdef Py_ssize_t b = grad.shape[0], steps = grad.shape[1]
    cdef Py_ssize_t d = grad.shape[2] // window
    out_arr = np.zeros((b, length, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, t, j, c
    with nogil:
        for i in range(b):
            for t in range(steps):
                for j in range(window):
                    for c in range(d):
                        out[i, t + j, c] += grad[i, t, j * d + c]
    return out_arr


def max_pool(const double[:, :, ::1] x, const cnp.int64_t[::1] counts):
    cdef Py_ssize_t b = x.shape[0], f = x.shape[2]
    out_arr = np.empty((b, f), dtype=np.float64)
    arg_arr = np.zeros((b, f), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] arg = arg_arr
    cdef Py_ssize_t i, t, c, n
    cdef double v
    with nogil:
        for i in range(b):
            n = counts[i]
            for c in range(f):
                out[i, c] = x[i, 0, c]
            for t in range(1, n):
                for c in range(f):
                    v = x[i, t, c]
                    # strict comparison keeps the first maximal index
                    if v > out[i, c]:
                        out[i, c] = v
                        arg[i, c] = t
    return out_arr, arg_arr


def max_pool_backward(const double[:, ::1] grad, const cnp.int64_t[:, ::1] arg,
                      Py_ssize_t steps):
    cdef Py_ssize_t b = grad.shape[0], f = grad.shape[1]
    out_arr = np.zeros((b, steps, f), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, c
    with nogil:
        for i in range(b):
            for c in range(f):
                out[i, arg[i, c], c] += grad[i, c]
    return out_arr


def scatter_add_rows(const double[:, ::1] src, const cnp.int64_t[::1] index,
                     Py_ssize_t num_rows):
    cdef Py_ssize_t n = src.shape[0], d = src.shape[1]
    out_arr = np.zeros((num_rows, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, c, r
    with nogil:
        for i in range(n):
            r = index[i]
            for c in range(d):
                out[r, c] += src[i, c]
    return out_arr
