# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled multi-scale pooling kernels.

Must stay bit-compatible with _pool_numpy: first-index argmax tie-breaking,
sequential row-major accumulation for the average, and identical per-element
operation order (max + sum/cells, avg gradient added before the max gradient).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def pool_forward(double[:, :, ::1] grid, int scales):
    cdef Py_ssize_t n = grid.shape[0]
    cdef Py_ssize_t d = grid.shape[2]
    cdef Py_ssize_t m_total = ((1 << (2 * scales)) - 1) // 3
    out_arr = np.empty((m_total, d), dtype=np.float64)
    argmax_arr = np.empty((m_total, d), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long long[:, ::1] argmax = argmax_arr
    cdef Py_ssize_t s, nb, bs, bi, bj, r0, c0, i, j, k, m
    cdef double cells, v, mx, acc
    cdef long long best

    m = 0
    for s in range(1, scales + 1):
        nb = 1 << (s - 1)
        bs = n // nb
        cells = <double> (bs * bs)
        for bi in range(nb):
            for bj in range(nb):
                r0 = bi * bs
                c0 = bj * bs
                for k in range(d):
                    v = grid[r0, c0, k]
                    mx = v
                    best = r0 * n + c0
                    acc = v
                    for j in range(c0 + 1, c0 + bs):
                        v = grid[r0, j, k]
                        acc = acc + v
                        if v > mx:
                            mx = v
                            best = r0 * n + j
                    for i in range(r0 + 1, r0 + bs):
                        for j in range(c0, c0 + bs):
                            v = grid[i, j, k]
                            acc = acc + v
                            if v > mx:
                                mx = v
                                best = i * n + j
                    out[m, k] = mx + acc / cells
                    argmax[m, k] = best
                m += 1
    return out_arr, argmax_arr


def pool_backward(double[:, ::1] grad_out, long long[:, ::1] argmax,
                  Py_ssize_t n, int scales):
    cdef Py_ssize_t d = grad_out.shape[1]
    grad_arr = np.zeros((n, n, d), dtype=np.float64)
    cdef double[:, :, ::1] grad = grad_arr
    cdef Py_ssize_t s, nb, bs, bi, bj, r0, c0, i, j, k, m
    cdef long long flat
    cdef double cells, g

    m = 0
    for s in range(1, scales + 1):
        nb = 1 << (s - 1)
        bs = n // nb
        cells = <double> (bs * bs)
        for bi in range(nb):
            for bj in range(nb):
                r0 = bi * bs
                c0 = bj * bs
                for k in range(d):
                    g = grad_out[m, k] / cells
                    for i in range(r0, r0 + bs):
                        for j in range(c0, c0 + bs):
                            grad[i, j, k] = grad[i, j, k] + g
                for k in range(d):
                    flat = argmax[m, k]
                    i = <Py_ssize_t> (flat // n)
                    j = <Py_ssize_t> (flat % n)
                    grad[i, j, k] = grad[i, j, k] + grad_out[m, k]
                m += 1
    return grad_arr
