# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the 3x3 conv data movement and 2x2 max pooling.

Loop orders and tie-breaking match ``pykernels`` element for element so the
two backends are bit-identical; only speed differs.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col3x3(floating[:, :, :, ::1] x):
    """(N, C, H, W) -> (N, C*9, H*W) patch matrix with zero padding of 1."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, ky, kx, i, j, ii, row, j0, j1, joff, dst
    if floating is float:
        out_arr = np.zeros((n, c * 9, h * w), dtype=np.float32)
    else:
        out_arr = np.zeros((n, c * 9, h * w), dtype=np.float64)
    cdef floating[:, :, ::1] out = out_arr
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ky in range(3):
                    for kx in range(3):
                        row = ch * 9 + ky * 3 + kx
                        # in-bounds j span for this kernel column: the copy
                        # below is contiguous in source and destination
                        j0 = 1 if kx == 0 else 0
                        j1 = w - 1 if kx == 2 else w
                        joff = kx - 1
                        for i in range(h):
                            ii = i + ky - 1
                            if ii < 0 or ii >= h:
                                continue
                            dst = i * w
                            for j in range(j0, j1):
                                out[b, row, dst + j] = x[b, ch, ii, j + joff]
    return out_arr


def col2im3x3(floating[:, :, ::1] dcols, Py_ssize_t height, Py_ssize_t width):
    """Adjoint of im2col3x3: scatter-add patches back to (N, C, H, W)."""
    cdef Py_ssize_t n = dcols.shape[0], c = dcols.shape[1] // 9
    cdef Py_ssize_t b, ch, ky, kx, i, j, ii, jj, row
    if floating is float:
        out_arr = np.zeros((n, c, height, width), dtype=np.float32)
    else:
        out_arr = np.zeros((n, c, height, width), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_arr
    with nogil:
        # ky/kx must stay the outer loops: each output element accumulates
        # its contributions in ascending (ky, kx) order, same as pykernels
        for ky in range(3):
            for kx in range(3):
                for b in range(n):
                    for ch in range(c):
                        row = ch * 9 + ky * 3 + kx
                        for i in range(height):
                            ii = i + ky - 1
                            if ii < 0 or ii >= height:
                                continue
                            for j in range(width):
                                jj = j + kx - 1
                                if jj < 0 or jj >= width:
                                    continue
                                out[b, ch, ii, jj] += dcols[b, row, i * width + j]
    return out_arr


def maxpool2x2(floating[:, :, :, ::1] x):
    """2x2/stride-2 max pool; returns (pooled, uint8 argmax in 0..3)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    cdef Py_ssize_t b, ch, i, j, dy_, dx_, k
    cdef floating best, v
    cdef unsigned char best_k
    if floating is float:
        y_arr = np.empty((n, c, ho, wo), dtype=np.float32)
    else:
        y_arr = np.empty((n, c, ho, wo), dtype=np.float64)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.uint8)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = x[b, ch, 2 * i, 2 * j]
                        best_k = 0
                        for k in range(1, 4):
                            dy_ = k >> 1
                            dx_ = k & 1
                            v = x[b, ch, 2 * i + dy_, 2 * j + dx_]
                            if v > best:
                                best = v
                                best_k = <unsigned char> k
                        y[b, ch, i, j] = best
                        idx[b, ch, i, j] = best_k
    return y_arr, idx_arr


def maxpool2x2_backward(
    floating[:, :, :, ::1] dy,
    const unsigned char[:, :, :, ::1] idx,
    Py_ssize_t height,
    Py_ssize_t width,
):
    """Route pooled gradients back to the argmax positions of the input."""
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t b, ch, i, j, k
    if floating is float:
        dx_arr = np.zeros((n, c, height, width), dtype=np.float32)
    else:
        dx_arr = np.zeros((n, c, height, width), dtype=np.float64)
    cdef floating[:, :, :, ::1] dx = dx_arr
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        k = idx[b, ch, i, j]
                        dx[b, ch, 2 * i + (k >> 1), 2 * j + (k & 1)] = dy[b, ch, i, j]
    return dx_arr
