"""Differentiable primitives.

Each primitive computes its value with numpy and registers a closure that maps
the output gradient to one gradient per input (``None`` for inputs that do not
need one).  Broadcasting is undone centrally by the tape.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import DTYPE, ShapeError, Tensor, as_tensor, make_result

# ---------------------------------------------------------------------------
# elementwise arithmetic


def _bshape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return make_result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


# ---------------------------------------------------------------------------
# unary nonlinearities


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.sin(ad), (a,), lambda g: (g * np.cos(ad),), "sin")


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),), "cos")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def clamp_min(a: Tensor, lo: float = 0.0) -> Tensor:
    mask = a.data > lo
    return make_result(np.where(mask, a.data, lo), (a,), lambda g: (g * mask,), "clamp_min")


def absolute(a: Tensor) -> Tensor:
    sgn = np.sign(a.data)
    return make_result(np.abs(a.data), (a,), lambda g: (g * sgn,), "abs")


def hypot(a: Tensor, b: Tensor) -> Tensor:
    """sqrt(a² + b²) with the zero-radius subgradient taken as 0."""
    a, b = as_tensor(a), as_tensor(b)
    _bshape(a, b, "hypot")
    r = np.hypot(a.data, b.data)
    safe = np.where(r > 0, r, 1.0)
    ca = np.where(r > 0, a.data / safe, 0.0)
    cb = np.where(r > 0, b.data / safe, 0.0)
    return make_result(r, (a, b), lambda g: (g * ca, g * cb), "hypot")


def wrap(a: Tensor, period: float) -> Tensor:
    """Reduce into [0, period); gradient passes through unchanged."""
    return make_result(np.mod(a.data, period), (a,), lambda g: (g,), "wrap")


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return make_result(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape),)

    return make_result(np.mean(a.data, axis=axes, keepdims=keepdims), (a,), back, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return make_result(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def _has_array(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def index(a: Tensor, idx) -> Tensor:
    shape = a.shape
    fancy = _has_array(idx)

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return make_result(np.array(a.data[idx]), (a,), back, "index")


def gather(a: Tensor, indices, axis: int = -1) -> Tensor:
    """Select entries ``indices`` (1-D int array) along ``axis``."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    n = a.shape[axis]
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise ShapeError(f"gather: index out of range for axis {axis} of size {n}")

    def back(g):
        moved = np.moveaxis(g, axis, -1)
        lead = moved.shape[:-1]
        flat = moved.reshape(-1, moved.shape[-1])
        rows = np.arange(flat.shape[0])[:, None]
        full = np.zeros((flat.shape[0], n), dtype=DTYPE)
        np.add.at(full, (rows, indices[None, :]), flat)
        return (np.moveaxis(full.reshape(*lead, n), -1, axis),)

    return make_result(np.take(a.data, indices, axis=axis), (a,), back, "gather")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    nd = tensors[0].ndim
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != axis):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ: {sorted(shapes)}")
    nd = tensors[0].ndim + 1
    axis = axis % nd

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back, "stack")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), back, "matmul")


# ---------------------------------------------------------------------------
# normalised exponentials


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), back, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (a,), back, "log_softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-row softmax cross-entropy, ``logits`` [B, C] and integer labels [B]."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n_cls = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        raise ValueError(f"cross_entropy: label out of range [0, {n_cls})")
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(x.shape[0])
    out = lse - shifted[rows, labels]

    def back(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * g[:, None],)

    return make_result(out, (logits,), back, "cross_entropy")


def layernorm(a: Tensor, axis: int = -1, eps: float = 1e-9) -> Tensor:
    """Normalise to zero mean / unit variance along ``axis`` (no affine terms)."""
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return make_result(xhat, (a,), back, "layernorm")


# ---------------------------------------------------------------------------
# convolution and pooling (NHWC)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution via im2col; ``x`` [B,H,W,Cin], ``w`` [kh,kw,Cin,Cout]."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x [B,H,W,C] and w [kh,kw,Cin,Cout], got {x.shape} and {w.shape}")
    B, H, W, C = x.shape
    kh, kw, cin, cout = w.shape
    if cin != C:
        raise ShapeError(f"conv2d: input channels {C} do not match kernel {w.shape}")
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d: input {x.shape} too small for kernel {w.shape} with pad {pad}")
    cols = kernels.im2col(x.data, kh, kw, stride, pad)
    wm = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wm).reshape(B, Ho, Wo, cout)

    def back(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(g2 @ wm.T, (B, H, W, C), kh, kw, stride, pad)
        return gx, gw

    return make_result(out, (x, w), back, "conv2d")


def mean_pool(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k×k average pooling over the spatial axes of NHWC input."""
    B, H, W, C = x.shape
    if H % k or W % k:
        raise ShapeError(f"mean_pool: spatial dims {(H, W)} not divisible by {k}")
    out = x.data.reshape(B, H // k, k, W // k, k, C).mean(axis=(2, 4))

    def back(g):
        g = g[:, :, None, :, None, :] / (k * k)
        return (np.broadcast_to(g, (B, H // k, k, W // k, k, C)).reshape(B, H, W, C),)

    return make_result(out, (x,), back, "mean_pool")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(mask))
