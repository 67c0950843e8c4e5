# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the convolution/pooling data-movement kernels."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col3x3(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    out = np.zeros((n * h * w, 9 * c), dtype=np.float64)
    cdef double[:, ::1] cols = out
    cdef Py_ssize_t b, i, j, ki, kj, ch, row, col0, yi, xj
    with nogil:
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    row = (b * h + i) * w + j
                    for ki in range(3):
                        yi = i + ki - 1
                        if yi < 0 or yi >= h:
                            continue
                        for kj in range(3):
                            xj = j + kj - 1
                            if xj < 0 or xj >= w:
                                continue
                            col0 = (ki * 3 + kj) * c
                            for ch in range(c):
                                cols[row, col0 + ch] = x[b, yi, xj, ch]
    return out


def col2im3x3(double[:, ::1] dcols, Py_ssize_t n, Py_ssize_t h, Py_ssize_t w, Py_ssize_t c):
    out = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, i, j, ki, kj, ch, row, col0, yi, xj
    # same (i, j, ki, kj) accumulation order as the numpy reference
    with nogil:
        for ki in range(3):
            for kj in range(3):
                col0 = (ki * 3 + kj) * c
                for b in range(n):
                    for i in range(h):
                        yi = i + ki - 1
                        if yi < 0 or yi >= h:
                            continue
                        for j in range(w):
                            xj = j + kj - 1
                            if xj < 0 or xj >= w:
                                continue
                            row = (b * h + i) * w + j
                            for ch in range(c):
                                dx[b, yi, xj, ch] += dcols[row, col0 + ch]
    return out


def maxpool2x2_fwd(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1] // 2, w = x.shape[2] // 2, c = x.shape[3]
    out = np.empty((n, h, w, c), dtype=np.float64)
    arg = np.empty((n, h, w, c), dtype=np.int8)
    cdef double[:, :, :, ::1] o = out
    cdef signed char[:, :, :, ::1] a = arg
    cdef Py_ssize_t b, i, j, ch
    cdef double best, v
    cdef signed char k
    with nogil:
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    for ch in range(c):
                        best = x[b, 2 * i, 2 * j, ch]
                        k = 0
                        v = x[b, 2 * i, 2 * j + 1, ch]
                        if v > best:
                            best = v
                            k = 1
                        v = x[b, 2 * i + 1, 2 * j, ch]
                        if v > best:
                            best = v
                            k = 2
                        v = x[b, 2 * i + 1, 2 * j + 1, ch]
                        if v > best:
                            best = v
                            k = 3
                        o[b, i, j, ch] = best
                        a[b, i, j, ch] = k
    return out, arg


def maxpool2x2_bwd(double[:, :, :, ::1] g, signed char[:, :, :, ::1] arg):
    cdef Py_ssize_t n = g.shape[0], h = g.shape[1], w = g.shape[2], c = g.shape[3]
    out = np.zeros((n, 2 * h, 2 * w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, i, j, ch
    cdef signed char k
    with nogil:
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    for ch in range(c):
                        k = arg[b, i, j, ch]
                        dx[b, 2 * i + k // 2, 2 * j + k % 2, ch] = g[b, i, j, ch]
    return out
