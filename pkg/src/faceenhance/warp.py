"""Image buffers, PNG I/O, face normalisation and piecewise-affine warping.

Images are float64 arrays of shape (H, W, C) with values in [0, 1]. Pixel
(row r, column c) sits at image coordinate (x=c, y=r), the same frame the
landmarks use.
"""
import logging
import warnings

import numpy as np
from PIL import Image

from . import kernels
from .geoembed import FaceMesh, LandmarkSet

log = logging.getLogger(__name__)

FACE_SIZE = 224


class WarpWarning(UserWarning):
    pass


def as_image(img):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3) or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 1|3) image, got shape {a.shape}")
    return np.ascontiguousarray(a)


def read_png(path):
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        a = np.asarray(im, dtype=np.float64) / 255.0
    return as_image(a)


def write_png(img, path):
    a = as_image(img)
    q = np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "L" if q.shape[2] == 1 else "RGB"
    Image.fromarray(q[:, :, 0] if mode == "L" else q, mode=mode).save(path, optimize=False)


def normalize_face(img, crop_box, size=FACE_SIZE):
    """Bilinear resample of ``crop_box = (x0, y0, x1, y1)`` to ``size`` x ``size``.

    Box edges are pixel boundaries; output pixel centres map to
    ``x0 + (j + 0.5) * (x1 - x0) / size - 0.5`` in the source.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    x0, y0, x1, y1 = (float(v) for v in crop_box)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate crop box {crop_box}")
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        raise ValueError(f"crop box {crop_box} outside {w}x{h} image")
    j = np.arange(size, dtype=np.float64)
    sx = x0 + (j + 0.5) * ((x1 - x0) / size) - 0.5
    sy = y0 + (j + 0.5) * ((y1 - y0) / size) - 0.5
    gx, gy = np.meshgrid(sx, sy)
    out = kernels.bilinear(img, gx.ravel(), gy.ravel())
    return out.reshape(size, size, img.shape[2])


def _points(obj):
    return np.ascontiguousarray(obj.points if isinstance(obj, LandmarkSet) else obj, dtype=np.float64)


def warp_face(img, src, dst, mesh, return_owner=False):
    """Map texture from the mesh on ``src`` landmarks onto the mesh on ``dst``.

    Each output pixel inside a destination triangle is pulled from the source
    image through that triangle's inverse affine map with bilinear sampling.
    The first triangle in mesh order owns pixels on shared edges. Pixels
    outside every destination triangle are copied unchanged. A zero-area
    destination triangle is skipped with a :class:`WarpWarning`; pixels lying
    on it that no other triangle covers borrow the map of the nearest valid
    triangle.
    """
    img = as_image(img)
    src_p = _points(src)
    dst_p = _points(dst)
    tris = np.ascontiguousarray(
        mesh.triangles if isinstance(mesh, FaceMesh) else mesh, dtype=np.int_).reshape(-1, 3)
    if src_p.shape != dst_p.shape:
        raise ValueError("source and destination landmark sets differ in size")
    if tris.size and tris.max() >= len(dst_p):
        raise IndexError("mesh references a landmark index out of range")
    out = img.copy()
    owner = np.full(img.shape[:2], -1, dtype=np.int32)
    kernels.raster_triangles(img, dst_p, src_p, tris, out, owner)

    degenerate = [t for t, (a, b, c) in enumerate(tris) if _area2(dst_p, a, b, c) == 0.0]
    if degenerate:
        msg = f"{len(degenerate)} zero-area destination triangle(s): {degenerate}"
        warnings.warn(msg, WarpWarning, stacklevel=2)
        log.warning(msg)
        _fill_degenerate(img, src_p, dst_p, tris, degenerate, out, owner)
    if return_owner:
        return out, owner
    return out


def _area2(p, a, b, c):
    return (p[b, 0] - p[a, 0]) * (p[c, 1] - p[a, 1]) - (p[b, 1] - p[a, 1]) * (p[c, 0] - p[a, 0])


def _affine(src_p, dst_p, tri):
    """3x3 matrix mapping homogeneous destination coords to source coords."""
    D = np.vstack([dst_p[list(tri)].T, np.ones(3)])
    S = np.vstack([src_p[list(tri)].T, np.ones(3)])
    return S @ np.linalg.inv(D)


def _fill_degenerate(img, src_p, dst_p, tris, degenerate, out, owner):
    valid = [t for t in range(len(tris)) if t not in set(degenerate)]
    if not valid:
        return
    centroids = np.array([dst_p[list(tris[t])].mean(axis=0) for t in valid])
    h, w = img.shape[:2]
    for t in degenerate:
        verts = dst_p[list(tris[t])]
        lo = np.maximum(np.ceil(verts.min(axis=0)).astype(int), 0)
        hi = np.minimum(np.floor(verts.max(axis=0)).astype(int), (w - 1, h - 1))
        # the two extreme vertices span the collapsed triangle
        a, b = verts[np.argmin(verts[:, 0] + verts[:, 1])], verts[np.argmax(verts[:, 0] + verts[:, 1])]
        seg = b - a
        seg_len2 = float(seg @ seg)
        near = valid[int(np.argmin(np.linalg.norm(centroids - verts.mean(axis=0), axis=1)))]
        M = _affine(src_p, dst_p, tris[near])
        for r in range(lo[1], hi[1] + 1):
            for c in range(lo[0], hi[0] + 1):
                if owner[r, c] >= 0:
                    continue
                p = np.array([c, r], dtype=np.float64)
                if seg_len2 > 0:
                    s = np.clip((p - a) @ seg / seg_len2, 0.0, 1.0)
                    dist = np.linalg.norm(a + s * seg - p)
                else:
                    dist = np.linalg.norm(p - a)
                if dist > 1e-9:
                    continue
                sx, sy, _ = M @ np.array([c, r, 1.0])
                out[r, c] = kernels.bilinear(img, np.array([sx]), np.array([sy]))[0]
                owner[r, c] = t
