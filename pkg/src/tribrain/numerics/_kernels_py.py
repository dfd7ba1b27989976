"""Pure-numpy fallbacks for the compiled convolution kernels."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """[B,H,W,C] -> [B*Ho*Wo, kh*kw*C] with patch order (ky, kx, c)."""
    B, H, W, C = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    Ho, Wo = win.shape[1], win.shape[2]
    # win: [B, Ho, Wo, C, kh, kw]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, kh * kw * C)


def col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch columns back to [B,H,W,C]."""
    B, H, W, C = shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    cols = cols.reshape(B, Ho, Wo, kh, kw, C)
    out = np.zeros((B, H + 2 * pad, W + 2 * pad, C), dtype=np.float64)
    for ky in range(kh):
        for kx in range(kw):
            out[:, ky : ky + stride * Ho : stride, kx : kx + stride * Wo : stride, :] += cols[:, :, :, ky, kx, :]
    if pad:
        out = out[:, pad:-pad, pad:-pad, :]
    return np.ascontiguousarray(out)
