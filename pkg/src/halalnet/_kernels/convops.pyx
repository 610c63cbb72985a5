# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot convolution/pooling kernels.

Same contracts as fallback.py; taps accumulate in the same (i, j) order.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // sh + 1
    cdef Py_ssize_t ow = (wp - kw) // sw + 1
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((n, oh, ow, kh * kw * c), dtype=dtype)
    cdef real[:, :, :, ::1] cols = cols_arr
    cdef Py_ssize_t b, o, p, i, j, ch, base
    for b in range(n):
        for o in range(oh):
            for p in range(ow):
                base = 0
                for i in range(kh):
                    for j in range(kw):
                        for ch in range(c):
                            cols[b, o, p, base + ch] = xp[b, o * sh + i, p * sw + j, ch]
                        base += c
    return cols_arr


def col2im_add(real[:, :, :, ::1] cols, int hp, int wp, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = cols.shape[0], oh = cols.shape[1], ow = cols.shape[2]
    cdef Py_ssize_t c = cols.shape[3] // (kh * kw)
    dtype = np.float32 if real is float else np.float64
    xg_arr = np.zeros((n, hp, wp, c), dtype=dtype)
    cdef real[:, :, :, ::1] xg = xg_arr
    cdef Py_ssize_t b, o, p, i, j, ch, base
    for b in range(n):
        for o in range(oh):
            for p in range(ow):
                base = 0
                for i in range(kh):
                    for j in range(kw):
                        for ch in range(c):
                            xg[b, o * sh + i, p * sw + j, ch] += cols[b, o, p, base + ch]
                        base += c
    return xg_arr


def depthwise_forward(real[:, :, :, ::1] xp, real[:, :, ::1] w, int sh, int sw):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1]
    cdef Py_ssize_t oh = (hp - kh) // sh + 1
    cdef Py_ssize_t ow = (wp - kw) // sw + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, oh, ow, c), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, o, p, i, j, ch
    cdef real acc
    for b in range(n):
        for o in range(oh):
            for p in range(ow):
                for ch in range(c):
                    acc = 0
                    for i in range(kh):
                        for j in range(kw):
                            acc = acc + xp[b, o * sh + i, p * sw + j, ch] * w[i, j, ch]
                    out[b, o, p, ch] = acc
    return out_arr


def depthwise_grad_input(real[:, :, :, ::1] g, real[:, :, ::1] w,
                         int hp, int wp, int sh, int sw):
    cdef Py_ssize_t n = g.shape[0], oh = g.shape[1], ow = g.shape[2], c = g.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1]
    dtype = np.float32 if real is float else np.float64
    xg_arr = np.zeros((n, hp, wp, c), dtype=dtype)
    cdef real[:, :, :, ::1] xg = xg_arr
    cdef Py_ssize_t b, o, p, i, j, ch
    cdef real gv
    for b in range(n):
        for o in range(oh):
            for p in range(ow):
                for ch in range(c):
                    gv = g[b, o, p, ch]
                    for i in range(kh):
                        for j in range(kw):
                            xg[b, o * sh + i, p * sw + j, ch] += gv * w[i, j, ch]
    return xg_arr


def depthwise_grad_weight(real[:, :, :, ::1] xp, real[:, :, :, ::1] g,
                          int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = g.shape[0], oh = g.shape[1], ow = g.shape[2], c = g.shape[3]
    dtype = np.float32 if real is float else np.float64
    wg_arr = np.zeros((kh, kw, c), dtype=dtype)
    cdef real[:, :, ::1] wg = wg_arr
    cdef Py_ssize_t b, o, p, i, j, ch
    cdef real gv
    for b in range(n):
        for o in range(oh):
            for p in range(ow):
                for ch in range(c):
                    gv = g[b, o, p, ch]
                    for i in range(kh):
                        for j in range(kw):
                            wg[i, j, ch] += xp[b, o * sh + i, p * sw + j, ch] * gv
    return wg_arr


def maxpool_forward(real[:, :, :, ::1] xp, int k, int s):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t oh = (hp - k) // s + 1
    cdef Py_ssize_t ow = (wp - k) // s + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, oh, ow, c), dtype=dtype)
    arg_arr = np.zeros((n, oh, ow, c), dtype=np.int32)
    cdef real[:, :, :, ::1] out = out_arr
    cdef cnp.int32_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, o, p, i, j, ch
    cdef real best, v
    cdef int best_idx
    for b in range(n):
        for o in range(oh):
            for p in range(ow):
                for ch in range(c):
                    best = xp[b, o * s, p * s, ch]
                    best_idx = 0
                    for i in range(k):
                        for j in range(k):
                            v = xp[b, o * s + i, p * s + j, ch]
                            if v > best:
                                best = v
                                best_idx = i * k + j
                    out[b, o, p, ch] = best
                    arg[b, o, p, ch] = best_idx
    return out_arr, arg_arr


def maxpool_grad_input(real[:, :, :, ::1] g, cnp.int32_t[:, :, :, ::1] arg,
                       int hp, int wp, int k, int s):
    cdef Py_ssize_t n = g.shape[0], oh = g.shape[1], ow = g.shape[2], c = g.shape[3]
    dtype = np.float32 if real is float else np.float64
    xg_arr = np.zeros((n, hp, wp, c), dtype=dtype)
    cdef real[:, :, :, ::1] xg = xg_arr
    cdef Py_ssize_t b, o, p, ch
    cdef int idx
    for b in range(n):
        for o in range(oh):
            for p in range(ow):
                for ch in range(c):
                    idx = arg[b, o, p, ch]
                    xg[b, o * s + idx // k, p * s + idx % k, ch] += g[b, o, p, ch]
    return xg_arr
