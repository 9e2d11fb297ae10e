"""Numpy reference kernels. Same signatures as the compiled ``_ckernels``."""

import numpy as np

BACKEND = "python"


def gather4(src, idx, w):
    """out[c, p] = sum_j w[p, j] * src[c, idx[p, j]]."""
    vals = src[:, idx]  # (C, P, 4)
    return np.einsum("cpj,pj->cp", vals, w.astype(src.dtype, copy=False))


def scatter4(g, idx, w, m):
    """Adjoint of :func:`gather4`: accumulates into a (C, m) array."""
    c = g.shape[0]
    out = np.empty((c, m), dtype=g.dtype)
    flat_idx = idx.ravel()
    for ch in range(c):
        contrib = (g[ch][:, None] * w).ravel()
        out[ch] = np.bincount(flat_idx, weights=contrib, minlength=m)
    return out


def im2col(xp, k, stride, ho, wo):
    """(B, C, Hp, Wp) padded input -> (B, Ho, Wo, C*k*k) patch matrix."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    b, c = xp.shape[:2]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, ho, wo, c * k * k)


def col2im(cols, c, hp, wp, k, stride):
    """Adjoint of :func:`im2col`."""
    b, ho, wo, _ = cols.shape
    cols = cols.reshape(b, ho, wo, c, k, k)
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return out
