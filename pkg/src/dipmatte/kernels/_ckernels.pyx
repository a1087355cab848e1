# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_numpy_kernels``."""

import numpy as np

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _reflect(Py_ssize_t p, Py_ssize_t n) noexcept nogil:
    if n == 1:
        return 0
    cdef Py_ssize_t period = 2 * (n - 1)
    if p < 0:
        p = -p
    p = p % period
    if p >= n:
        p = period - p
    return p


cdef Py_ssize_t[:, ::1] _tap_table(Py_ssize_t n, Py_ssize_t out_n, int k, int stride):
    # table[t, o] = source index of tap t for output o along one axis
    cdef Py_ssize_t pad = k // 2
    table = np.empty((k, out_n), dtype=np.intp)
    cdef Py_ssize_t[:, ::1] tab = table
    cdef Py_ssize_t t, o
    for t in range(k):
        for o in range(out_n):
            tab[t, o] = _reflect(o * stride + t - pad, n)
    return tab


def im2col(real[:, :, ::1] x, int k, int stride):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t pad = k // 2
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.empty((c * k * k, ho * wo), dtype=dtype)
    cdef real[:, ::1] o = out
    cdef Py_ssize_t[:, ::1] rt = _tap_table(h, ho, k, stride)
    cdef Py_ssize_t[:, ::1] ct = _tap_table(w, wo, k, stride)
    cdef Py_ssize_t ci, ky, kx, oy, ox, row, sy
    cdef real* dst
    cdef Py_ssize_t* cols_k
    with nogil:
        for ci in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (ci * k + ky) * k + kx
                    cols_k = &ct[kx, 0]
                    for oy in range(ho):
                        sy = rt[ky, oy]
                        dst = &o[row, oy * wo]
                        for ox in range(wo):
                            dst[ox] = x[ci, sy, cols_k[ox]]
    return out


def col2im(real[:, ::1] cols, int c, int h, int w, int k, int stride):
    cdef Py_ssize_t pad = k // 2
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out = np.zeros((c, h, w), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t[:, ::1] rt = _tap_table(h, ho, k, stride)
    cdef Py_ssize_t[:, ::1] ct = _tap_table(w, wo, k, stride)
    cdef Py_ssize_t ci, ky, kx, oy, ox, row, sy
    cdef real* src
    cdef real* dst
    cdef Py_ssize_t* cols_k
    with nogil:
        for ci in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (ci * k + ky) * k + kx
                    cols_k = &ct[kx, 0]
                    for oy in range(ho):
                        sy = rt[ky, oy]
                        src = &cols[row, oy * wo]
                        dst = &o[ci, sy, 0]
                        for ox in range(wo):
                            dst[cols_k[ox]] += src[ox]
    return out


def upsample2x(real[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((c, 2 * h, 2 * w), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t ci, y, xx
    cdef real v
    for ci in range(c):
        for y in range(h):
            for xx in range(w):
                v = x[ci, y, xx]
                o[ci, 2 * y, 2 * xx] = v
                o[ci, 2 * y, 2 * xx + 1] = v
                o[ci, 2 * y + 1, 2 * xx] = v
                o[ci, 2 * y + 1, 2 * xx + 1] = v
    return out


def upsample2x_adjoint(real[:, :, ::1] g):
    cdef Py_ssize_t c = g.shape[0], h = g.shape[1] // 2, w = g.shape[2] // 2
    dtype = np.float32 if real is float else np.float64
    out = np.empty((c, h, w), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t ci, y, xx
    for ci in range(c):
        for y in range(h):
            for xx in range(w):
                # same pairing order as the numpy reduction over (2, 2)
                o[ci, y, xx] = ((g[ci, 2 * y, 2 * xx] + g[ci, 2 * y + 1, 2 * xx])
                                + (g[ci, 2 * y, 2 * xx + 1] + g[ci, 2 * y + 1, 2 * xx + 1]))
    return out


cdef inline real _absr(real v) noexcept nogil:
    return v if v >= 0 else -v


def spatial_grad_l1(real[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((1, h, w), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t ci, y, xx
    cdef real *row
    cdef real *below
    cdef real *orow
    with nogil:
        for ci in range(c):
            for y in range(h):
                row = &x[ci, y, 0]
                orow = &o[0, y, 0]
                if y + 1 < h:
                    below = &x[ci, y + 1, 0]
                    for xx in range(w - 1):
                        orow[xx] += _absr(row[xx + 1] - row[xx]) + _absr(below[xx] - row[xx])
                    orow[w - 1] += _absr(below[w - 1] - row[w - 1])
                else:
                    for xx in range(w - 1):
                        orow[xx] += _absr(row[xx + 1] - row[xx])
    return out


cdef inline real _signed(real d, real g) noexcept nogil:
    return g if d > 0 else (-g if d < 0 else 0)


def spatial_grad_l1_adjoint(real[:, :, ::1] x, real[:, :, ::1] g):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((c, h, w), dtype=dtype)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t ci, y, xx
    cdef real s
    cdef real *row
    cdef real *below
    cdef real *grow
    cdef real *orow
    cdef real *obelow
    with nogil:
        for ci in range(c):
            for y in range(h):
                row = &x[ci, y, 0]
                grow = &g[0, y, 0]
                orow = &o[ci, y, 0]
                if y + 1 < h:
                    below = &x[ci, y + 1, 0]
                    obelow = &o[ci, y + 1, 0]
                for xx in range(w):
                    if xx + 1 < w:
                        s = _signed(row[xx + 1] - row[xx], grow[xx])
                        orow[xx + 1] += s
                        orow[xx] -= s
                    if y + 1 < h:
                        s = _signed(below[xx] - row[xx], grow[xx])
                        obelow[xx] += s
                        orow[xx] -= s
    return out
