"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per kernel and backend, and checks both backends
agree bit-for-bit on each input.
"""
import argparse
import time

import numpy as np

from faceenhance import kernels
from faceenhance.geoembed import reference_landmarks, triangulate
from faceenhance import _kernels_py


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t)
    return best, result


def cases(rng):
    x = rng.normal(size=(8, 32, 56, 56))
    cols = kernels.pure.im2col(x, 3, 1, 1)
    lm = reference_landmarks().points
    mesh = triangulate(lm)
    tris = np.array(mesh.triangles, dtype=np.int_)
    img = rng.random((224, 224, 3))
    dst = np.ascontiguousarray(lm + rng.normal(0, 1.5, lm.shape))
    sx = rng.uniform(0, 223, 200_000)
    sy = rng.uniform(0, 223, 200_000)

    def raster(impl):
        out = img.copy()
        owner = np.full((224, 224), -1, dtype=np.int32)
        impl.raster_triangles(img, dst, lm, tris, out, owner)
        return out

    return {
        "im2col 8x32x56x56 k3": lambda impl: impl.im2col(x, 3, 1, 1),
        "col2im 8x32x56x56 k3": lambda impl: impl.col2im(cols, x.shape, 3, 1, 1),
        "raster 224x224 face mesh": raster,
        "bilinear 200k samples": lambda impl: impl.bilinear(img, sx, sy),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    compiled = kernels._impl if kernels.BACKEND != _kernels_py.BACKEND else None
    if compiled is None:
        print("compiled extension not available; timing the numpy fallback only")
    print(f"{'kernel':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}  identical")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py, r_py = _best(lambda: fn(_kernels_py), args.repeat)
        if compiled is None:
            print(f"{name:28s} {t_py * 1e3:10.2f}")
            continue
        t_c, r_c = _best(lambda: fn(compiled), args.repeat)
        print(f"{name:28s} {t_py * 1e3:10.2f} {t_c * 1e3:10.2f} {t_py / t_c:8.2f}  {np.array_equal(r_py, r_c)}")


if __name__ == "__main__":
    main()
