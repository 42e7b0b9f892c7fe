# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels.

Same contracts as ops_python: cross-correlation, zero padding, float64
accumulators, first-occurrence tie-break in max pooling.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "compiled"


def conv2d_forward(cnp.ndarray[double, ndim=3] x,
                   cnp.ndarray[double, ndim=4] w,
                   int stride, int pad):
    cdef int h = x.shape[0], wd = x.shape[1], cin = x.shape[2]
    cdef int kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (wd + 2 * pad - kw) // stride + 1
    cdef cnp.ndarray[double, ndim=3] out = np.zeros((ho, wo, cout), dtype=np.float64)
    cdef double[:, :, ::1] xv = x
    cdef double[:, :, :, ::1] wv = w
    cdef double[:, :, ::1] ov = out
    cdef int oy, ox, ky, kx, ci, co, iy, ix
    cdef double acc
    with nogil:
        for oy in range(ho):
            for ox in range(wo):
                for co in range(cout):
                    acc = 0.0
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pad
                            if ix < 0 or ix >= wd:
                                continue
                            for ci in range(cin):
                                acc += xv[iy, ix, ci] * wv[ky, kx, ci, co]
                    ov[oy, ox, co] = acc
    return out


def conv2d_backward(cnp.ndarray[double, ndim=3] x,
                    cnp.ndarray[double, ndim=4] w,
                    int stride, int pad,
                    cnp.ndarray[double, ndim=3] gout):
    cdef int h = x.shape[0], wd = x.shape[1], cin = x.shape[2]
    cdef int kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]
    cdef int ho = gout.shape[0], wo = gout.shape[1]
    cdef cnp.ndarray[double, ndim=3] gx = np.zeros((h, wd, cin), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4] gw = np.zeros((kh, kw, cin, cout), dtype=np.float64)
    cdef double[:, :, ::1] xv = x
    cdef double[:, :, :, ::1] wv = w
    cdef double[:, :, ::1] gv = gout
    cdef double[:, :, ::1] gxv = gx
    cdef double[:, :, :, ::1] gwv = gw
    cdef int oy, ox, ky, kx, ci, co, iy, ix
    cdef double g
    with nogil:
        for oy in range(ho):
            for ox in range(wo):
                for co in range(cout):
                    g = gv[oy, ox, co]
                    if g == 0.0:
                        continue
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pad
                            if ix < 0 or ix >= wd:
                                continue
                            for ci in range(cin):
                                gwv[ky, kx, ci, co] += xv[iy, ix, ci] * g
                                gxv[iy, ix, ci] += wv[ky, kx, ci, co] * g
    return gx, gw


def maxpool_forward(cnp.ndarray[double, ndim=3] x, int size, int stride):
    cdef int h = x.shape[0], wd = x.shape[1], c = x.shape[2]
    cdef int ho = (h - size) // stride + 1
    cdef int wo = (wd - size) // stride + 1
    cdef cnp.ndarray[double, ndim=3] out = np.empty((ho, wo, c), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=3] argmax = np.empty((ho, wo, c), dtype=np.int64)
    cdef double[:, :, ::1] xv = x
    cdef double[:, :, ::1] ov = out
    cdef cnp.int64_t[:, :, ::1] av = argmax
    cdef int oy, ox, ch, ky, kx, iy, ix
    cdef double best, v
    cdef cnp.int64_t best_idx
    with nogil:
        for oy in range(ho):
            for ox in range(wo):
                for ch in range(c):
                    best = xv[oy * stride, ox * stride, ch]
                    best_idx = (oy * stride) * wd + ox * stride
                    for ky in range(size):
                        iy = oy * stride + ky
                        for kx in range(size):
                            ix = ox * stride + kx
                            v = xv[iy, ix, ch]
                            if v > best:
                                best = v
                                best_idx = iy * wd + ix
                    ov[oy, ox, ch] = best
                    av[oy, ox, ch] = best_idx
    return out, argmax


def maxpool_backward(x_shape, cnp.ndarray[cnp.int64_t, ndim=3] argmax,
                     cnp.ndarray[double, ndim=3] gout):
    cdef int h = x_shape[0], wd = x_shape[1], c = x_shape[2]
    cdef int ho = gout.shape[0], wo = gout.shape[1]
    cdef cnp.ndarray[double, ndim=3] gx = np.zeros((h, wd, c), dtype=np.float64)
    cdef double[:, :, ::1] gxv = gx
    cdef double[:, :, ::1] gv = gout
    cdef cnp.int64_t[:, :, ::1] av = argmax
    cdef int oy, ox, ch
    cdef cnp.int64_t flat
    with nogil:
        for oy in range(ho):
            for ox in range(wo):
                for ch in range(c):
                    flat = av[oy, ox, ch]
                    gxv[flat // wd, flat % wd, ch] += gv[oy, ox, ch]
    return gx
