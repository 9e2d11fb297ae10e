"""Hot-loop kernels, compiled when the extension is built.

Set ``TANGENTDEPTH_PURE=1`` to force the numpy fallback.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("TANGENTDEPTH_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND


def gather4(src, idx, w):
    src = np.ascontiguousarray(src)
    return _impl.gather4(src, idx, w)


def scatter4(g, idx, w, m):
    return _impl.scatter4(np.ascontiguousarray(g), idx, w, m)


def im2col(xp, k, stride, ho, wo):
    return _impl.im2col(np.ascontiguousarray(xp), k, stride, ho, wo)


def col2im(cols, c, hp, wp, k, stride):
    return _impl.col2im(np.ascontiguousarray(cols), c, hp, wp, k, stride)
