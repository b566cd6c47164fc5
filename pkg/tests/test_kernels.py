"""The compiled and numpy kernels must agree bit for bit."""
import numpy as np
import pytest

from faceenhance import kernels
from faceenhance.geoembed import triangulate

pure = kernels.pure

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")


@needs_ext
@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (9, 1, 4), (1, 1, 0), (2, 3, 2)])
def test_im2col_col2im_identical(rng, k, stride, pad):
    x = rng.normal(size=(2, 3, 11, 9))
    a = kernels.im2col(x, k, stride, pad)
    b = pure.im2col(x, k, stride, pad)
    assert np.array_equal(a, b)
    cols = rng.normal(size=a.shape)
    assert np.array_equal(kernels.col2im(cols, x.shape, k, stride, pad), pure.col2im(cols, x.shape, k, stride, pad))


def test_col2im_is_adjoint_of_im2col(rng):
    x = rng.normal(size=(2, 2, 7, 6))
    cols = rng.normal(size=pure.im2col(x, 3, 2, 1).shape)
    for impl in (kernels, pure):
        lhs = np.sum(impl.im2col(x, 3, 2, 1) * cols)
        rhs = np.sum(x * impl.col2im(cols, x.shape, 3, 2, 1))
        assert lhs == pytest.approx(rhs, rel=1e-12)


@needs_ext
def test_bilinear_identical(rng):
    img = rng.random((13, 17, 3))
    sx = rng.uniform(-2, 19, 500)
    sy = rng.uniform(-2, 15, 500)
    assert np.array_equal(kernels.bilinear(img, sx, sy), pure.bilinear(img, sx, sy))


@needs_ext
def test_raster_identical(rng, ref_landmarks, ref_mesh):
    img = rng.random((224, 224, 3))
    src = ref_landmarks.points
    dst = src + rng.normal(0, 1.5, src.shape)
    tris = np.array(ref_mesh.triangles, dtype=np.int_)
    outs = []
    for impl in (kernels, pure):
        out = img.copy()
        owner = np.full((224, 224), -1, dtype=np.int32)
        impl.raster_triangles(img, np.ascontiguousarray(dst), np.ascontiguousarray(src), tris, out, owner)
        outs.append((out, owner))
    assert np.array_equal(outs[0][0], outs[1][0])
    assert np.array_equal(outs[0][1], outs[1][1])


def test_random_mesh_raster_identical(rng):
    pts = rng.uniform(0, 40, (25, 2))
    mesh = triangulate(pts)
    img = rng.random((40, 40, 1))
    dst = pts + rng.normal(0, 0.8, pts.shape)
    tris = np.array(mesh.triangles, dtype=np.int_)
    results = []
    for impl in (kernels, pure):
        out = img.copy()
        owner = np.full((40, 40), -1, dtype=np.int32)
        impl.raster_triangles(img, dst, pts, tris, out, owner)
        results.append(out)
    assert np.array_equal(results[0], results[1])
