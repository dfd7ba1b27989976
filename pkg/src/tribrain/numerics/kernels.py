"""Hot convolution kernels: compiled extension when built, numpy otherwise.

Set ``TRIBRAIN_PURE_PYTHON=1`` to force the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("TRIBRAIN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    return _impl.im2col(np.ascontiguousarray(x, dtype=np.float64), kh, kw, stride, pad)


def col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    return _impl.col2im(np.ascontiguousarray(cols, dtype=np.float64), tuple(shape), kh, kw, stride, pad)
