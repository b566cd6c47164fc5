# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: conv unfolding and the piecewise-affine raster.

Arithmetic order matches ``_kernels_py`` exactly; the extension is built with
``-ffp-contract=off`` so no fused multiply-adds change the rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil

cnp.import_array()

BACKEND = "cython"


def im2col(double[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t L = n * ho * wo
    out_arr = np.empty((c * k * k, L))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t ci, ki, kj, ni, oh, ow, row, col, iy, ix
    with nogil:
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    col = 0
                    for ni in range(n):
                        for oh in range(ho):
                            iy = oh * stride + ki - pad
                            if iy < 0 or iy >= h:
                                for ow in range(wo):
                                    out[row, col] = 0.0
                                    col += 1
                                continue
                            for ow in range(wo):
                                ix = ow * stride + kj - pad
                                if ix < 0 or ix >= w:
                                    out[row, col] = 0.0
                                else:
                                    out[row, col] = x[ni, ci, iy, ix]
                                col += 1
    return out_arr


def col2im(cols, shape, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(c * k * k, n * ho * wo)
    # accumulate on a padded canvas in the same (ki, kj) order as the numpy path
    xp_arr = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    cdef double[:, :, :, ::1] xp = xp_arr
    cdef Py_ssize_t ci, ki, kj, ni, oh, ow, row, col
    with nogil:
        for ki in range(k):
            for kj in range(k):
                for ci in range(c):
                    row = (ci * k + ki) * k + kj
                    col = 0
                    for ni in range(n):
                        for oh in range(ho):
                            for ow in range(wo):
                                xp[ni, ci, oh * stride + ki, ow * stride + kj] += cv[row, col]
                                col += 1
    if pad:
        return np.ascontiguousarray(xp_arr[:, :, pad:pad + h, pad:pad + w])
    return xp_arr


cdef inline double _edge(double[:, ::1] pts, Py_ssize_t i, Py_ssize_t j,
                         double px, double py) nogil:
    if i < j:
        return (pts[j, 0] - pts[i, 0]) * (py - pts[i, 1]) - (pts[j, 1] - pts[i, 1]) * (px - pts[i, 0])
    return -((pts[i, 0] - pts[j, 0]) * (py - pts[j, 1]) - (pts[i, 1] - pts[j, 1]) * (px - pts[j, 0]))


cdef inline void _bilinear(double[:, :, ::1] img, double sx, double sy,
                           double[:, :, ::1] out, Py_ssize_t r, Py_ssize_t q) nogil:
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], nc = img.shape[2]
    cdef Py_ssize_t x0, y0, x1, y1, ch
    cdef double fx, fy, top, bot
    if sx < 0.0:
        sx = 0.0
    if sx > w - 1.0:
        sx = w - 1.0
    if sy < 0.0:
        sy = 0.0
    if sy > h - 1.0:
        sy = h - 1.0
    x0 = <Py_ssize_t>floor(sx)
    y0 = <Py_ssize_t>floor(sy)
    x1 = x0 + 1 if x0 + 1 < w else w - 1
    y1 = y0 + 1 if y0 + 1 < h else h - 1
    fx = sx - x0
    fy = sy - y0
    for ch in range(nc):
        top = (1.0 - fx) * img[y0, x0, ch] + fx * img[y0, x1, ch]
        bot = (1.0 - fx) * img[y1, x0, ch] + fx * img[y1, x1, ch]
        out[r, q, ch] = (1.0 - fy) * top + fy * bot


def bilinear(img, sx, sy):
    cdef double[:, :, ::1] im = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[::1] xs = np.ascontiguousarray(sx, dtype=np.float64)
    cdef double[::1] ys = np.ascontiguousarray(sy, dtype=np.float64)
    out_arr = np.empty((xs.shape[0], 1, im.shape[2]))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(xs.shape[0]):
            _bilinear(im, xs[i], ys[i], out, i, 0)
    return out_arr[:, 0, :]


def raster_triangles(img, dst, src, tris, out, owner):
    cdef double[:, :, ::1] im = img
    cdef double[:, ::1] d = dst
    cdef double[:, ::1] s = src
    cdef long[:, ::1] tr = np.ascontiguousarray(tris, dtype=np.int_)
    cdef double[:, :, ::1] o = out
    cdef int[:, ::1] own = owner
    cdef Py_ssize_t h = im.shape[0], w = im.shape[1], nc = im.shape[2]
    cdef Py_ssize_t t, a, b, c, r, q, ch, x_lo, x_hi, y_lo, y_hi
    cdef double xa, ya, xb, yb, xc, yc, area2, px, py, e_ab, e_bc, e_ca
    cdef double la, lb, lc, sx, sy, mn, mx
    cdef bint same, inside
    with nogil:
        for t in range(tr.shape[0]):
            a = tr[t, 0]
            b = tr[t, 1]
            c = tr[t, 2]
            xa = d[a, 0]
            ya = d[a, 1]
            xb = d[b, 0]
            yb = d[b, 1]
            xc = d[c, 0]
            yc = d[c, 1]
            area2 = (xb - xa) * (yc - ya) - (yb - ya) * (xc - xa)
            if area2 == 0.0:
                continue
            mn = min(xa, min(xb, xc))
            mx = max(xa, max(xb, xc))
            x_lo = max(0, <Py_ssize_t>ceil(mn))
            x_hi = min(w - 1, <Py_ssize_t>floor(mx))
            mn = min(ya, min(yb, yc))
            mx = max(ya, max(yb, yc))
            y_lo = max(0, <Py_ssize_t>ceil(mn))
            y_hi = min(h - 1, <Py_ssize_t>floor(mx))
            same = (s[a, 0] == xa and s[a, 1] == ya and s[b, 0] == xb and s[b, 1] == yb
                    and s[c, 0] == xc and s[c, 1] == yc)
            for r in range(y_lo, y_hi + 1):
                py = <double>r
                for q in range(x_lo, x_hi + 1):
                    if own[r, q] >= 0:
                        continue
                    px = <double>q
                    e_ab = _edge(d, a, b, px, py)
                    e_bc = _edge(d, b, c, px, py)
                    e_ca = _edge(d, c, a, px, py)
                    if area2 > 0:
                        inside = e_ab >= 0 and e_bc >= 0 and e_ca >= 0
                    else:
                        inside = e_ab <= 0 and e_bc <= 0 and e_ca <= 0
                    if not inside:
                        continue
                    own[r, q] = <int>t
                    if same:
                        for ch in range(nc):
                            o[r, q, ch] = im[r, q, ch]
                        continue
                    la = e_bc / area2
                    lb = e_ca / area2
                    lc = e_ab / area2
                    sx = la * s[a, 0] + lb * s[b, 0] + lc * s[c, 0]
                    sy = la * s[a, 1] + lb * s[b, 1] + lc * s[c, 1]
                    _bilinear(im, sx, sy, o, r, q)
