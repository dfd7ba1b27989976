"""Perceptual feature processing: image encoder, positional embedding, key/value projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import LayerNorm, Module, param
from .numerics import ShapeError, Tensor, ops


@dataclass
class ImageBatch:
    pixels: np.ndarray  # [B, H, W, C] in [0, 1]
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 4:
            raise ShapeError(f"ImageBatch pixels must be [B,H,W,C], got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("ImageBatch contains non-finite pixels")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass
class FeatureMap:
    features: Tensor  # [B, h, w, d]
    flat: Tensor  # [B, N, d]
    pooled: Tensor  # [B, d]

    @property
    def grid(self) -> tuple[int, int]:
        return self.features.shape[1], self.features.shape[2]


@dataclass
class KVPair:
    keys: Tensor  # [B, N, d_k]
    values: Tensor  # [B, N, d_v]


def positional_embed(h: int, w: int, d: int) -> np.ndarray:
    """Fixed 2-D sinusoidal embedding [h, w, d].

    The first d/2 channels encode the row index and the rest the column;
    within each half, channel 2k is sin(pos / 10000^(2k/half)) and 2k+1 the
    matching cosine.
    """
    if d % 2:
        raise ValueError(f"positional embedding needs an even channel count, got {d}")
    half = d // 2

    def axis_code(n: int) -> np.ndarray:
        pos = np.arange(n, dtype=np.float64)[:, None]
        ch = np.arange(half)
        freq = 1.0 / 10000.0 ** ((ch // 2) * 2 / half)
        ang = pos * freq[None, :]
        return np.where(ch % 2 == 0, np.sin(ang), np.cos(ang))

    rows = axis_code(h)[:, None, :].repeat(w, axis=1)
    cols = axis_code(w)[None, :, :].repeat(h, axis=0)
    return np.concatenate([rows, cols], axis=-1)


class ConvBlock(Module):
    """3×3 conv -> relu -> layernorm -> 2×2 mean pool.

    The norm runs over the whole feature map of each sample (h, w and
    channels) with a per-channel gain and shift.  Normalising each pixel over
    channels alone would blow flat regions up into unit-variance noise.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        std = np.sqrt(2.0 / (9 * c_in))
        self.kernel = param(rng.normal(0.0, std, size=(3, 3, c_in, c_out)))
        self.bias = param(np.zeros(c_out))
        self.norm = LayerNorm(c_out, axis=(1, 2, 3))

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.relu(ops.conv2d(x, self.kernel, stride=1, pad=1) + self.bias)
        return ops.mean_pool(self.norm(y), 2)


class Backbone(Module):
    """Reduced convolutional stack; each block halves the spatial grid."""

    def __init__(self, in_channels: int, widths: tuple[int, ...], rng: np.random.Generator):
        chans = (in_channels, *widths)
        self.blocks = [ConvBlock(chans[i], chans[i + 1], rng) for i in range(len(widths))]

    @property
    def stride(self) -> int:
        return 2 ** len(self.blocks)

    @property
    def out_channels(self) -> int:
        return self.blocks[-1].kernel.shape[-1]

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def encode(batch: ImageBatch | np.ndarray, backbone: Backbone) -> FeatureMap:
    """F = Φ(x) + P(Φ(x)) with a fixed sinusoidal P; also flattens and pools."""
    pixels = batch.pixels if isinstance(batch, ImageBatch) else np.asarray(batch, dtype=np.float64)
    _, H, W, _ = pixels.shape
    s = backbone.stride
    if H < 8 or W < 8 or H % s or W % s:
        raise ShapeError(f"image {H}x{W} is too small or not divisible by the backbone stride {s}")
    phi = backbone(Tensor(pixels))
    B, h, w, d = phi.shape
    feats = phi + positional_embed(h, w, d)[None]
    return FeatureMap(features=feats, flat=feats.reshape(B, h * w, d), pooled=feats.mean(axis=(1, 2)))


def project_kv(fmap: FeatureMap, W_k: Tensor, W_v: Tensor) -> KVPair:
    d = fmap.flat.shape[-1]
    if W_k.shape[0] != d or W_v.shape[0] != d:
        raise ShapeError(f"projection inputs must have {d} rows, got W_k {W_k.shape} and W_v {W_v.shape}")
    return KVPair(keys=fmap.flat @ W_k, values=fmap.flat @ W_v)


class Perception(Module):
    def __init__(self, in_channels: int, widths: tuple[int, ...], d_k: int, d_v: int, rng: np.random.Generator):
        self.backbone = Backbone(in_channels, widths, rng)
        d = widths[-1]
        self.W_k = param(rng.uniform(-1, 1, size=(d, d_k)) / np.sqrt(d))
        self.W_v = param(rng.uniform(-1, 1, size=(d, d_v)) / np.sqrt(d))

    def __call__(self, batch) -> tuple[FeatureMap, KVPair]:
        fmap = encode(batch, self.backbone)
        kv = project_kv(fmap, self.W_k, self.W_v)
        return fmap, kv
