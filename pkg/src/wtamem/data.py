"""Labeled image datasets: CIFAR binary files and a synthetic generator."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

RECORD_BYTES = {"c10": 3073, "c100": 3074}
N_CLASSES = {"c10": 10, "c100": 100}
IMAGE_SHAPE = (3, 32, 32)


@dataclass
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.dtype != np.uint8:
            raise ValueError("images must be 8-bit (uint8)")
        if self.images.ndim != 4:
            raise ValueError(f"images must be N x C x H x W, got shape {self.images.shape}")
        if len(self.images) == 0 or len(self.images) != len(self.labels):
            raise ValueError("dataset must be nonempty with one label per image")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.images[index], self.labels[index], self.n_classes)

    def head(self, n: int | None) -> "LabeledDataset":
        return self if n is None or n >= len(self) else self.subset(slice(0, n))


def load_cifar(path, variant: str = "c10", limit: int | None = None) -> LabeledDataset:
    """Read a CIFAR-10 (``c10``) or CIFAR-100 (``c100``) binary batch file.

    CIFAR-100 records carry (coarse, fine) labels; the fine label is used.
    """
    if variant not in RECORD_BYTES:
        raise ValueError(f"unknown CIFAR variant {variant!r}")
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    rec = RECORD_BYTES[variant]
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % rec:
        raise ValueError(f"{path}: truncated CIFAR file ({raw.size} bytes is not a multiple of {rec})")
    records = raw.reshape(-1, rec)
    if limit is not None:
        records = records[:limit]
    n_label = rec - 3072
    labels = records[:, n_label - 1].astype(np.int64)
    if labels.max() >= N_CLASSES[variant]:
        raise ValueError(f"{path}: label {labels.max()} out of range for {variant}")
    images = records[:, n_label:].reshape(-1, *IMAGE_SHAPE).copy()
    return LabeledDataset(images, labels, N_CLASSES[variant])


def write_cifar(path, dataset: LabeledDataset, variant: str = "c10", coarse_labels=None):
    if variant not in RECORD_BYTES:
        raise ValueError(f"unknown CIFAR variant {variant!r}")
    if dataset.images.shape[1:] != IMAGE_SHAPE:
        raise ValueError("CIFAR records hold 3 x 32 x 32 images")
    n = len(dataset)
    cols = [dataset.labels.astype(np.uint8)[:, None]]
    if variant == "c100":
        coarse = np.zeros(n, np.uint8) if coarse_labels is None else np.asarray(coarse_labels, np.uint8)
        cols.insert(0, coarse[:, None])
    cols.append(dataset.images.reshape(n, -1))
    np.concatenate(cols, axis=1).tofile(path)


def _prototypes(n_classes, blobs, rng, size):
    centers = rng.uniform(0.2 * size, 0.8 * size, (n_classes, blobs, 2))
    widths = rng.uniform(0.08 * size, 0.16 * size, (n_classes, blobs))
    colors = rng.uniform(-1.0, 1.0, (n_classes, blobs, 3))
    return centers, widths, colors


def make_synthetic(n: int, n_classes: int = 10, seed=0, prototype_seed=0, size: int = 32,
                   blobs: int = 3, jitter: float = 3.5, noise: float = 0.2,
                   distractors: int = 2, contrast: float = 0.35) -> LabeledDataset:
    """Gaussian class blobs rendered as 8-bit RGB images.

    Each class is a fixed arrangement of colored Gaussian blobs drawn from
    ``prototype_seed``; samples jitter the blob positions and amplitudes, add
    random distractor blobs and pixel noise, and are mirrored with
    probability 1/2.  Datasets with the same ``prototype_seed`` share classes.
    """
    proto_rng = np.random.default_rng(prototype_seed)
    centers, widths, colors = _prototypes(n_classes, blobs, proto_rng, size)
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % n_classes)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = centers[labels] + rng.normal(0.0, jitter, (n, blobs, 2))
    amp = rng.uniform(0.6, 1.4, (n, blobs))
    if distractors:
        c = np.concatenate([c, rng.uniform(0.1 * size, 0.9 * size, (n, distractors, 2))], axis=1)
        amp = np.concatenate([amp, rng.uniform(0.6, 1.4, (n, distractors))], axis=1)
        w = np.concatenate([widths[labels], rng.uniform(0.08 * size, 0.16 * size, (n, distractors))], axis=1)
        col = np.concatenate([colors[labels], rng.uniform(-1, 1, (n, distractors, 3))], axis=1)
    else:
        w, col = widths[labels], colors[labels]

    img = np.empty((n, 3, size, size))
    for lo in range(0, n, 512):
        sl = slice(lo, lo + 512)
        dy = yy[None, None] - c[sl, :, 0, None, None]
        dx = xx[None, None] - c[sl, :, 1, None, None]
        bumps = amp[sl, :, None, None] * np.exp(-(dx ** 2 + dy ** 2) / (2 * w[sl, :, None, None] ** 2))
        img[sl] = 0.5 + contrast * np.einsum("nbc,nbhw->nchw", col[sl], bumps)
    img += rng.normal(0.0, noise, img.shape)
    flip = rng.random(n) < 0.5
    img[flip] = img[flip][..., ::-1]
    images = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    return LabeledDataset(images, labels, n_classes)
