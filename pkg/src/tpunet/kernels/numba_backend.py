"""Numba-jitted kernel implementations.

The data-movement loops (padding, column fill, column scatter, pool
routing) are jitted; the large matrix products still go through BLAS
via numpy, which profiling shows is the fastest split on one core.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _pad_jit(x, ph, pw):
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + 2 * ph, W + 2 * pw))
    xp[:, :, ph:ph + H, pw:pw + W] = x
    return xp


@njit(cache=True)
def _fill_cols(cols, xp, kh, kw, Ho, Wo):
    B, C, _, _ = xp.shape
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    dst = cols[b, c, i, j]
                    src = xp[b, c]
                    for y in range(Ho):
                        d = dst[y]
                        s = src[i + y]
                        for t in range(Wo):
                            d[t] = s[j + t]


@njit(cache=True)
def _scatter_cols(gxp, gc, kh, kw, Ho, Wo):
    B, C, _, _ = gxp.shape
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    src = gc[b, c, i, j]
                    dst = gxp[b, c]
                    for y in range(Ho):
                        s = src[y]
                        d = dst[i + y]
                        for t in range(Wo):
                            d[j + t] += s[t]


def _im2col(x, kh, kw, ph, pw, Ho, Wo):
    xp = _pad_jit(x, ph, pw) if (ph or pw) else x
    B, C = x.shape[0], x.shape[1]
    cols = np.empty((B, C, kh, kw, Ho, Wo))
    _fill_cols(cols, xp, kh, kw, Ho, Wo)
    return cols.reshape(B, C * kh * kw, Ho * Wo)


def conv_forward(x, w, pad, want_cols: bool = False):
    B, C, H, W = x.shape
    Cout, _, kh, kw = w.shape
    ph, pw = pad
    Ho, Wo = H + 2 * ph - kh + 1, W + 2 * pw - kw + 1
    cols = _im2col(x, kh, kw, ph, pw, Ho, Wo)
    out = np.matmul(w.reshape(Cout, -1), cols).reshape(B, Cout, Ho, Wo)
    return (out, cols) if want_cols else out


def conv_backward(x, w, gout, pad, need_x, need_w, cols=None):
    B, C, H, W = x.shape
    Cout, _, kh, kw = w.shape
    ph, pw = pad
    _, _, Ho, Wo = gout.shape
    gflat = gout.reshape(B, Cout, Ho * Wo)
    gx = gw = None
    if need_w:
        if cols is None:
            cols = _im2col(x, kh, kw, ph, pw, Ho, Wo)
        # batched GEMM over transposed views; tensordot would copy cols
        gw = np.matmul(gflat, cols.swapaxes(1, 2)).sum(axis=0).reshape(w.shape)
    if need_x:
        gcols = np.matmul(w.reshape(Cout, -1).T, gflat)
        gc = np.ascontiguousarray(gcols.reshape(B, C, kh, kw, Ho, Wo))
        gxp = np.zeros((B, C, H + 2 * ph, W + 2 * pw))
        _scatter_cols(gxp, gc, kh, kw, Ho, Wo)
        gx = np.ascontiguousarray(gxp[:, :, ph:ph + H, pw:pw + W]) if (ph or pw) else gxp
    return gx, gw


@njit(cache=True)
def _maxpool2_fwd(x):
    B, C, H, W = x.shape
    Ho, Wo = H // 2, W // 2
    out = np.empty((B, C, Ho, Wo))
    idx = np.empty((B, C, Ho, Wo), dtype=np.uint8)
    for b in range(B):
        for c in range(C):
            for y in range(Ho):
                for t in range(Wo):
                    best = x[b, c, 2 * y, 2 * t]
                    k = 0
                    v = x[b, c, 2 * y, 2 * t + 1]
                    if v > best:
                        best, k = v, 1
                    v = x[b, c, 2 * y + 1, 2 * t]
                    if v > best:
                        best, k = v, 2
                    v = x[b, c, 2 * y + 1, 2 * t + 1]
                    if v > best:
                        best, k = v, 3
                    out[b, c, y, t] = best
                    idx[b, c, y, t] = k
    return out, idx


@njit(cache=True)
def _maxpool2_bwd(gout, idx):
    B, C, Ho, Wo = gout.shape
    gx = np.zeros((B, C, 2 * Ho, 2 * Wo))
    for b in range(B):
        for c in range(C):
            for y in range(Ho):
                for t in range(Wo):
                    k = idx[b, c, y, t]
                    gx[b, c, 2 * y + k // 2, 2 * t + k % 2] = gout[b, c, y, t]
    return gx


def maxpool2_forward(x):
    return _maxpool2_fwd(x)


def maxpool2_backward(gout, idx):
    return _maxpool2_bwd(gout, idx)
