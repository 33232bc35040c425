"""Pure-numpy kernel implementations (im2col + BLAS matmul)."""

import numpy as np


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _im2col(xp, kh, kw, Ho, Wo):
    B, C, _, _ = xp.shape
    cols = np.empty((B, C, kh, kw, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + Ho, j:j + Wo]
    return cols.reshape(B, C * kh * kw, Ho * Wo)


def conv_forward(x, w, pad, want_cols: bool = False):
    B, C, H, W = x.shape
    Cout, _, kh, kw = w.shape
    ph, pw = pad
    Ho, Wo = H + 2 * ph - kh + 1, W + 2 * pw - kw + 1
    cols = _im2col(_pad(x, ph, pw), kh, kw, Ho, Wo)
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
            cols = _im2col(_pad(x, ph, pw), kh, kw, Ho, Wo)
        # batched GEMM over transposed views; tensordot would copy cols
        gw = np.matmul(gflat, cols.swapaxes(1, 2)).sum(axis=0).reshape(w.shape)
    if need_x:
        gcols = np.matmul(w.reshape(Cout, -1).T, gflat)
        gc = gcols.reshape(B, C, kh, kw, Ho, Wo)
        gxp = np.zeros((B, C, H + 2 * ph, W + 2 * pw))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + Ho, j:j + Wo] += gc[:, :, i, j]
        gx = gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp
        gx = np.ascontiguousarray(gx)
    return gx, gw


def maxpool2_forward(x):
    B, C, H, W = x.shape
    Ho, Wo = H // 2, W // 2
    v = x.reshape(B, C, Ho, 2, Wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)
    idx = v.argmax(axis=-1).astype(np.uint8)  # argmax keeps the first of tied maxima
    out = np.take_along_axis(v, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(gout, idx):
    B, C, Ho, Wo = gout.shape
    gv = np.zeros((B, C, Ho, Wo, 4))
    np.put_along_axis(gv, idx[..., None].astype(np.intp), gout[..., None], axis=-1)
    gx = gv.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, 2 * Ho, 2 * Wo)
    return np.ascontiguousarray(gx)
