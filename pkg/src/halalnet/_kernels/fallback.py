"""Pure numpy implementations of the hot convolution/pooling kernels.

All functions take pre-padded NHWC float32/float64 arrays.  The compiled
extension in convops.pyx mirrors these signatures; both accumulate window
taps in the same (i, j) order so results agree across backends.
"""

from __future__ import annotations

import numpy as np


def im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Gather conv patches: (N,Hp,Wp,C) -> (N,OH,OW,kh*kw*C)."""
    n, hp, wp, c = xp.shape
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    cols = np.empty((n, oh, ow, kh * kw * c), dtype=xp.dtype)
    idx = 0
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, idx:idx + c] = xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :]
            idx += c
    return cols


def col2im_add(cols: np.ndarray, hp: int, wp: int,
               kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Scatter-add patches back, the adjoint of im2col."""
    n, oh, ow, _ = cols.shape
    c = cols.shape[3] // (kh * kw)
    xg = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    idx = 0
    for i in range(kh):
        for j in range(kw):
            xg[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += cols[:, :, :, idx:idx + c]
            idx += c
    return xg


def depthwise_forward(xp: np.ndarray, w: np.ndarray, sh: int, sw: int) -> np.ndarray:
    """Per-channel spatial conv: (N,Hp,Wp,C) x (kh,kw,C) -> (N,OH,OW,C)."""
    n, hp, wp, c = xp.shape
    kh, kw = w.shape[:2]
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1
    out = np.zeros((n, oh, ow, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] * w[i, j, :]
    return out


def depthwise_grad_input(g: np.ndarray, w: np.ndarray,
                         hp: int, wp: int, sh: int, sw: int) -> np.ndarray:
    n, oh, ow, c = g.shape
    kh, kw = w.shape[:2]
    xg = np.zeros((n, hp, wp, c), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            xg[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :] += g * w[i, j, :]
    return xg


def depthwise_grad_weight(xp: np.ndarray, g: np.ndarray,
                          kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    n, oh, ow, c = g.shape
    wg = np.zeros((kh, kw, c), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            win = xp[:, i:i + sh * oh:sh, j:j + sw * ow:sw, :]
            wg[i, j, :] = (win * g).sum(axis=(0, 1, 2))
    return wg


def maxpool_forward(xp: np.ndarray, k: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Max over k x k windows; also returns the flat tap index of each max.

    Ties go to the earliest (i, j) tap, so gradients are deterministic.
    """
    n, hp, wp, c = xp.shape
    oh = (hp - k) // s + 1
    ow = (wp - k) // s + 1
    out = np.full((n, oh, ow, c), -np.inf, dtype=xp.dtype)
    arg = np.zeros((n, oh, ow, c), dtype=np.int32)
    for i in range(k):
        for j in range(k):
            v = xp[:, i:i + s * oh:s, j:j + s * ow:s, :]
            better = v > out
            out = np.where(better, v, out)
            arg = np.where(better, np.int32(i * k + j), arg)
    return out, arg


def maxpool_grad_input(g: np.ndarray, arg: np.ndarray,
                       hp: int, wp: int, k: int, s: int) -> np.ndarray:
    n, oh, ow, c = g.shape
    xg = np.zeros((n, hp, wp, c), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            sel = arg == i * k + j
            xg[:, i:i + s * oh:s, j:j + s * ow:s, :] += np.where(sel, g, 0)
    return xg
