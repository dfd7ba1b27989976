"""Datasets: synthetic shapes, binary image records, noise corruption, human label files."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


class UndefinedCorrelation(ArithmeticError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # [n, H, W, C]
    labels: np.ndarray  # [n]
    class_count: int
    name: str = ""
    human_probs: np.ndarray | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        hp = None if self.human_probs is None else self.human_probs[idx]
        return replace(self, images=self.images[idx], labels=self.labels[idx], human_probs=hp)


@dataclass(frozen=True)
class BinaryLayout:
    """One record = ``label_bytes`` label bytes then H·W·C channel-planar pixel bytes."""

    height: int = 32
    width: int = 32
    channels: int = 3
    label_bytes: int = 1
    label_index: int = 0
    class_count: int = 10

    @property
    def record_bytes(self) -> int:
        return self.label_bytes + self.height * self.width * self.channels


def load_binary_images(path, layout: BinaryLayout = BinaryLayout(), name: str | None = None) -> Dataset:
    raw = Path(path).read_bytes()
    rec = layout.record_bytes
    if len(raw) % rec:
        whole = len(raw) // rec
        raise DataError(f"{path}: truncated record at byte offset {whole * rec} (record length {rec}, file size {len(raw)})")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    labels = arr[:, layout.label_index].astype(np.int64)
    bad = np.nonzero(labels >= layout.class_count)[0]
    if bad.size:
        raise DataError(f"{path}: record {bad[0]} has label {labels[bad[0]]} >= class count {layout.class_count}")
    pix = arr[:, layout.label_bytes :].reshape(-1, layout.channels, layout.height, layout.width)
    images = pix.transpose(0, 2, 3, 1).astype(np.float64) / 255.0
    return Dataset(images, labels, layout.class_count, name or Path(path).stem)


def write_binary_images(path, ds: Dataset, layout: BinaryLayout | None = None) -> None:
    """Inverse of :func:`load_binary_images` (pixels quantised to bytes)."""
    n, H, W, C = ds.images.shape
    layout = layout or BinaryLayout(H, W, C, 1, 0, ds.class_count)
    pix = np.clip(np.rint(ds.images * 255.0), 0, 255).astype(np.uint8).transpose(0, 3, 1, 2).reshape(n, -1)
    lab = np.zeros((n, layout.label_bytes), dtype=np.uint8)
    lab[:, layout.label_index] = ds.labels
    Path(path).write_bytes(np.concatenate([lab, pix], axis=1).tobytes())


# ---------------------------------------------------------------------------
# synthetic shapes

SHAPES = ("disk", "square", "triangle", "cross", "ring", "diamond", "hbar", "vbar", "xcross", "corner")


def _shape_mask(kind: str, yy: np.ndarray, xx: np.ndarray, r: float) -> np.ndarray:
    ay, ax = np.abs(yy), np.abs(xx)
    arm = 0.35 * r
    if kind == "disk":
        return yy**2 + xx**2 <= r**2
    if kind == "square":
        return (ay <= 0.8 * r) & (ax <= 0.8 * r)
    if kind == "triangle":
        return (yy <= 0.8 * r) & (yy >= -r + 2.0 * ax)
    if kind == "cross":
        return ((ay <= arm) & (ax <= r)) | ((ax <= arm) & (ay <= r))
    if kind == "ring":
        d2 = yy**2 + xx**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if kind == "diamond":
        return ay + ax <= r
    if kind == "hbar":
        return (ay <= arm) & (ax <= r)
    if kind == "vbar":
        return (ax <= arm) & (ay <= r)
    if kind == "xcross":
        return (np.abs(yy - xx) <= arm) & (np.abs(yy + xx) <= 2 * r) | (np.abs(yy + xx) <= arm) & (np.abs(yy - xx) <= 2 * r)
    if kind == "corner":
        return ((ay <= r) & (xx >= -r) & (xx <= -r + 2 * arm)) | ((ax <= r) & (yy <= r) & (yy >= r - 2 * arm))
    raise ValueError(kind)


def synth_shapes(n: int, size: int = 32, classes: int = 3, seed: int = 0, channels: int = 3, background: float = 0.0) -> Dataset:
    """Filled shapes with random position, scale, intensity and tint.

    The background is zero by default; a positive ``background`` fills it
    with per-pixel uniform texture in ``[0, background]``.

    Class counts are balanced (the first ``n % classes`` classes get one
    extra); the order is shuffled with the seed.
    """
    if size < 16:
        raise ValueError(f"synthetic images need size >= 16, got {size}")
    if not 2 <= classes <= len(SHAPES):
        raise ValueError(f"classes must lie in [2, {len(SHAPES)}], got {classes}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    coords = np.arange(size, dtype=np.float64) + 0.5
    images = np.zeros((n, size, size, channels))
    for i, lab in enumerate(labels):
        r = rng.uniform(0.28, 0.36) * size
        cy, cx = size / 2 + rng.uniform(-0.06, 0.06, size=2) * size
        yy = coords[:, None] - cy
        xx = coords[None, :] - cx
        mask = _shape_mask(SHAPES[lab], yy, xx, r)
        tint = rng.uniform(0.6, 1.0) * rng.uniform(0.75, 1.0, size=channels)
        bg = rng.uniform(0.0, background, size=(size, size, channels))
        images[i] = np.where(mask[:, :, None], tint[None, None, :], bg)
    return Dataset(images, labels, classes, f"shapes{classes}")


# ---------------------------------------------------------------------------
# corruption, splits, human labels


def add_gaussian_noise(ds: Dataset, sigma: float, seed: int) -> Dataset:
    """pixel + N(0, σ²), not clipped; labels and shape preserved."""
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return replace(ds, images=ds.images.copy())
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=ds.images.shape)
    return replace(ds, images=ds.images + noise, name=f"{ds.name}+n{sigma:g}")


def split(ds: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_val = int(round(len(ds) * val_fraction))
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


def load_human_probs(path, ds: Dataset) -> Dataset:
    """Attach comma-delimited per-image class probabilities (one row per image, dataset order)."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != ds.class_count:
                raise DataError(f"{path}: row {lineno} has {len(parts)} values, expected {ds.class_count}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise DataError(f"{path}: row {lineno} is not numeric") from None
    probs = np.array(rows, dtype=np.float64).reshape(-1, ds.class_count)
    if probs.shape[0] != len(ds):
        raise DataError(f"{path}: {probs.shape[0]} rows for {len(ds)} images")
    sums = probs.sum(axis=1)
    bad = np.nonzero((np.abs(sums - 1.0) > 1e-3) | np.any(probs < 0, axis=1))[0]
    if bad.size:
        raise DataError(f"{path}: row {bad[0] + 1} sums to {sums[bad[0]]:.6g}, not a distribution")
    return replace(ds, human_probs=probs / sums[:, None])


def correlation(x, y) -> float:
    """Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 3:
        raise ValueError("correlation needs two equal-length 1-D samples of size >= 3")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt((xc * xc).sum()), np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("correlation is undefined for a constant sample")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def batches(ds: Dataset, batch_size: int, rng: np.random.Generator | None = None):
    idx = np.arange(len(ds)) if rng is None else rng.permutation(len(ds))
    for s in range(0, len(ds), batch_size):
        sel = idx[s : s + batch_size]
        yield ds.images[sel], ds.labels[sel], sel
