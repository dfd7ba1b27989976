# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for NHWC float64 input."""

import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    padded_arr = np.pad(np.asarray(x), ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else np.asarray(x)
    cdef const double[:, :, :, ::1] xp = padded_arr
    out_arr = np.empty((B * Ho * Wo, kh * kw * C), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, oy, ox, ky, row
    # for a fixed kernel row the (kx, c) block is contiguous in the padded input
    cdef size_t span = kw * C * sizeof(double)
    with nogil:
        for b in range(B):
            for oy in range(Ho):
                for ox in range(Wo):
                    row = (b * Ho + oy) * Wo + ox
                    for ky in range(kh):
                        memcpy(&out[row, ky * kw * C], &xp[b, oy * stride + ky, ox * stride, 0], span)
    return out_arr


def col2im(const double[:, ::1] cols, tuple shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t B = shape[0], H = shape[1], W = shape[2], C = shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((B, H, W, C), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, oy, ox, ky, kx, c, iy, ix, row, col
    with nogil:
        for b in range(B):
            for oy in range(Ho):
                for ox in range(Wo):
                    row = (b * Ho + oy) * Wo + ox
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= H:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pad
                            if ix < 0 or ix >= W:
                                continue
                            col = (ky * kw + kx) * C
                            for c in range(C):
                                out[b, iy, ix, c] += cols[row, col + c]
    return out_arr
