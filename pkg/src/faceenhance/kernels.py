"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. Set ``FACEENHANCE_PURE=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("FACEENHANCE_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
im2col = _impl.im2col
col2im = _impl.col2im
raster_triangles = _impl.raster_triangles
bilinear = _impl.bilinear

pure = _kernels_py
