"""Pure numpy implementations of the hot per-pixel kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and semantics.  Arrays are C-contiguous float32 or float64; outputs keep the
input dtype.
"""

from functools import lru_cache

import numpy as np


def reflect_index(n, pad):
    """Source index for each padded coordinate ``-pad .. n + pad - 1``.

    A singleton axis reflects onto itself.
    """
    p = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(p)
    period = 2 * (n - 1)
    p = np.abs(p) % period
    return np.where(p >= n, period - p, p)


@lru_cache(maxsize=256)
def _gather_index(h, w, k, stride):
    pad = k // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    rows = reflect_index(h, pad)
    cols = reflect_index(w, pad)
    oy = np.arange(ho) * stride
    ox = np.arange(wo) * stride
    ky = np.arange(k)
    kx = np.arange(k)
    # (ky, kx, oy, ox) -> flat source pixel
    r = rows[ky[:, None, None, None] + oy[None, None, :, None]]
    c = cols[kx[None, :, None, None] + ox[None, None, None, :]]
    idx = (r * w + c).reshape(k * k, ho * wo)
    idx.setflags(write=False)
    return idx, ho, wo


def im2col(x, k, stride):
    c, h, w = x.shape
    idx, ho, wo = _gather_index(h, w, k, stride)
    return x.reshape(c, h * w)[:, idx].reshape(c * k * k, ho * wo)


def col2im(cols, c, h, w, k, stride):
    idx, ho, wo = _gather_index(h, w, k, stride)
    hw = h * w
    flat = (np.arange(c)[:, None, None] * hw + idx[None]).ravel()
    out = np.bincount(flat, weights=cols.ravel(), minlength=c * hw)
    return out.astype(cols.dtype, copy=False).reshape(c, h, w)


def upsample2x(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2x_adjoint(g):
    c, h, w = g.shape
    return g.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def spatial_grad_l1(x):
    c, h, w = x.shape
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
    dy[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    return (np.abs(dx) + np.abs(dy)).sum(axis=0, keepdims=True)


def spatial_grad_l1_adjoint(x, g):
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
    dy[:, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    sx = np.sign(dx) * g
    sy = np.sign(dy) * g
    out = np.zeros_like(x)
    out[:, :, 1:] += sx[:, :, :-1]
    out[:, :, :-1] -= sx[:, :, :-1]
    out[:, 1:, :] += sy[:, :-1, :]
    out[:, :-1, :] -= sy[:, :-1, :]
    return out
