"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation so that both backends
produce bit-identical results; keep the arithmetic order in sync when editing.
"""
import numpy as np

BACKEND = "numpy"


def im2col(x, k, stride, pad):
    """Unfold (N, C, H, W) into columns of shape (C*k*k, N*Ho*Wo).

    Row order is (c, ki, kj); column order is (n, oh, ow).
    """
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if pad:
        xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cols = np.empty((c, k, k, n, ho, wo))
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
            cols[:, ki, kj] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * ho * wo)


def col2im(cols, shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to (N, C, H, W)."""
    n, c, h, w = shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(c, k, k, n, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += \
                cols[:, ki, kj].transpose(1, 0, 2, 3)
    if pad:
        return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])
    return xp


def _edge(pts, i, j, px, py):
    # canonical direction i < j so shared edges evaluate identically
    if i < j:
        return (pts[j, 0] - pts[i, 0]) * (py - pts[i, 1]) - (pts[j, 1] - pts[i, 1]) * (px - pts[i, 0])
    return -((pts[i, 0] - pts[j, 0]) * (py - pts[j, 1]) - (pts[i, 1] - pts[j, 1]) * (px - pts[j, 0]))


def bilinear(img, sx, sy):
    """Sample (H, W, C) ``img`` at float coordinates with edge clamping."""
    h, w = img.shape[:2]
    sx = np.minimum(np.maximum(sx, 0.0), w - 1.0)
    sy = np.minimum(np.maximum(sy, 0.0), h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[:, None]
    fy = (sy - y0)[:, None]
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bot


def raster_triangles(img, dst, src, tris, out, owner):
    """Piecewise-affine inverse warp of ``img`` into ``out``.

    For every destination triangle in list order, pixels whose integer
    centres lie inside it (edges inclusive) and are not yet owned are sampled
    from the corresponding source location. ``owner`` (H, W) int32 records the
    triangle index per pixel and must be -1 where unassigned. Zero-area
    destination triangles are skipped.
    """
    h, w = img.shape[:2]
    for t in range(tris.shape[0]):
        a, b, c = int(tris[t, 0]), int(tris[t, 1]), int(tris[t, 2])
        xa, ya = dst[a]
        xb, yb = dst[b]
        xc, yc = dst[c]
        area2 = (xb - xa) * (yc - ya) - (yb - ya) * (xc - xa)
        if area2 == 0.0:
            continue
        x_lo = max(0, int(np.ceil(min(xa, xb, xc))))
        x_hi = min(w - 1, int(np.floor(max(xa, xb, xc))))
        y_lo = max(0, int(np.ceil(min(ya, yb, yc))))
        y_hi = min(h - 1, int(np.floor(max(ya, yb, yc))))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        rows, colsx = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1]
        rows = rows.ravel()
        colsx = colsx.ravel()
        px = colsx.astype(np.float64)
        py = rows.astype(np.float64)
        e_ab = _edge(dst, a, b, px, py)
        e_bc = _edge(dst, b, c, px, py)
        e_ca = _edge(dst, c, a, px, py)
        if area2 > 0:
            inside = (e_ab >= 0) & (e_bc >= 0) & (e_ca >= 0)
        else:
            inside = (e_ab <= 0) & (e_bc <= 0) & (e_ca <= 0)
        inside &= owner[rows, colsx] < 0
        if not inside.any():
            continue
        rows = rows[inside]
        colsx = colsx[inside]
        owner[rows, colsx] = t
        if (src[a, 0] == xa and src[a, 1] == ya and src[b, 0] == xb and src[b, 1] == yb
                and src[c, 0] == xc and src[c, 1] == yc):
            out[rows, colsx] = img[rows, colsx]
            continue
        la = e_bc[inside] / area2
        lb = e_ca[inside] / area2
        lc = e_ab[inside] / area2
        sx = la * src[a, 0] + lb * src[b, 0] + lc * src[c, 0]
        sy = la * src[a, 1] + lb * src[b, 1] + lc * src[c, 1]
        out[rows, colsx] = bilinear(img, sx, sy)
