# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled depthwise 3x3 convolution kernels (padding 1, stride 1)."""

import numpy as np


def dwconv3x3_forward(const double[:, :, :, ::1] x, const double[:, :, ::1] k):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t b, c, i, j, di, dj, ii, jj
    cdef double s
    out = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(H):
                    for j in range(W):
                        s = 0.0
                        for di in range(3):
                            ii = i + di - 1
                            if ii < 0 or ii >= H:
                                continue
                            for dj in range(3):
                                jj = j + dj - 1
                                if jj < 0 or jj >= W:
                                    continue
                                s = s + k[c, di, dj] * x[b, c, ii, jj]
                        o[b, c, i, j] = s
    return out


def dwconv3x3_backward(const double[:, :, :, ::1] g, const double[:, :, :, ::1] x,
                       const double[:, :, ::1] k):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t b, c, i, j, di, dj, ii, jj
    cdef double gv
    gx = np.zeros((B, C, H, W), dtype=np.float64)
    gk = np.zeros((C, 3, 3), dtype=np.float64)
    cdef double[:, :, :, ::1] gxv = gx
    cdef double[:, :, ::1] gkv = gk
    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(H):
                    for j in range(W):
                        gv = g[b, c, i, j]
                        for di in range(3):
                            ii = i + di - 1
                            if ii < 0 or ii >= H:
                                continue
                            for dj in range(3):
                                jj = j + dj - 1
                                if jj < 0 or jj >= W:
                                    continue
                                gxv[b, c, ii, jj] += k[c, di, dj] * gv
                                gkv[c, di, dj] += x[b, c, ii, jj] * gv
    return gx, gk
