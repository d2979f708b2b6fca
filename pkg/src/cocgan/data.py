"""IDX ingestion, batching and synthetic fixtures."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, LoadError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


@dataclass
class Dataset:
    """Images in [-1, 1] as (count, 28, 28, ch) float32 plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int = 10
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise InputError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InputError(f"labels outside [0, {self.n_classes})")

    def __len__(self):
        return len(self.images)

    def subset(self, count):
        return Dataset(self.images[:count], self.labels[:count], self.n_classes,
                       dict(self.source, subset=int(count)))

    def split(self, count):
        """(first ``count`` items, the rest)."""
        rest = Dataset(self.images[count:], self.labels[count:], self.n_classes, dict(self.source, offset=int(count)))
        return self.subset(count), rest


def _open(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_all(path):
    try:
        with _open(path) as f:
            return f.read()
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from None


def normalize_pixels(raw):
    """uint8 -> float32 via v/127.5 - 1."""
    return (np.asarray(raw, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def denormalize_pixels(x):
    """Inverse of :func:`normalize_pixels`, rounding to the nearest byte."""
    return np.clip(np.rint(127.5 * (np.asarray(x, dtype=np.float64) + 1.0)), 0, 255).astype(np.uint8)


def parse_idx_images(data, name="images"):
    if len(data) < 16:
        raise LoadError(f"{name}: header truncated at offset {len(data)}")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IMAGE_MAGIC:
        raise LoadError(f"{name}: bad magic {magic:#010x} at offset 0, expected {IMAGE_MAGIC:#010x}")
    if (rows, cols) != (28, 28):
        raise LoadError(f"{name}: image size {rows}x{cols} at offset 8, expected 28x28")
    need = 16 + count * rows * cols
    if len(data) != need:
        raise LoadError(f"{name}: payload ends at offset {len(data)}, header promises {need}")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def parse_idx_labels(data, name="labels"):
    if len(data) < 8:
        raise LoadError(f"{name}: header truncated at offset {len(data)}")
    magic, count = struct.unpack(">II", data[:8])
    if magic != LABEL_MAGIC:
        raise LoadError(f"{name}: bad magic {magic:#010x} at offset 0, expected {LABEL_MAGIC:#010x}")
    if len(data) != 8 + count:
        raise LoadError(f"{name}: payload ends at offset {len(data)}, header promises {8 + count}")
    return np.frombuffer(data, dtype=np.uint8, offset=8)


def read_idx(images_path, labels_path, limit=None):
    """Load an IDX image/label pair (optionally gzipped) into a Dataset.

    Args:
        images_path: file with magic 2051 and 28x28 images.
        labels_path: file with magic 2049.
        limit: keep only the first ``limit`` items.
    """
    raw = parse_idx_images(_read_all(images_path), str(images_path))
    labels = parse_idx_labels(_read_all(labels_path), str(labels_path))
    if len(raw) != len(labels):
        raise LoadError(
            f"count mismatch: {images_path} has {len(raw)} images (offset 4), "
            f"{labels_path} has {len(labels)} labels (offset 4)"
        )
    if limit is not None:
        raw, labels = raw[:limit], labels[:limit]
    images = normalize_pixels(raw)[..., None]
    return Dataset(images, labels.astype(np.int64), 10,
                   {"images": str(images_path), "labels": str(labels_path), "count": int(len(labels))})


def write_idx(images_u8, labels, images_path, labels_path):
    """Write uint8 (count, 28, 28) images and labels as IDX (gzip if path ends .gz)."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img = struct.pack(">IIII", IMAGE_MAGIC, len(images_u8), *images_u8.shape[1:3]) + images_u8.tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes()
    for path, payload in ((images_path, img), (labels_path, lab)):
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as f:
            f.write(payload)


def batch_iter(ds, batch, seed, epoch):
    """Yield (images, labels) batches of exactly ``batch`` items.

    The permutation is keyed by (seed, epoch); the final short batch is
    dropped.
    """
    if batch < 1:
        raise InputError(f"batch must be >= 1, got {batch}")
    rng = np.random.default_rng([int(seed), int(epoch)])
    order = rng.permutation(len(ds))
    for start in range(0, len(ds) - batch + 1, batch):
        idx = order[start:start + batch]
        yield ds.images[idx], ds.labels[idx]


def n_batches(ds, batch):
    return len(ds) // batch


def blob_centers(n_classes):
    """Fixed blob centre (row, col) per class on a ring around the image centre."""
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    return np.stack([13.5 + 8.0 * np.sin(angles), 13.5 + 8.0 * np.cos(angles)], axis=1)


def synthetic_blobs(n, n_classes=10, seed=0, sigma=2.5, jitter=1.0):
    """Gaussian-blob images; class k has its blob near a fixed centre.

    Items cycle through the classes, so the first ``n_classes`` items hold
    one image per class. Values lie in [-1, 1].
    """
    if n < n_classes:
        raise InputError(f"need at least one image per class ({n} < {n_classes})")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    centers = blob_centers(n_classes)[labels] + rng.uniform(-jitter, jitter, size=(n, 2))
    widths = sigma * rng.uniform(0.85, 1.15, size=n)
    yy, xx = np.mgrid[0:28, 0:28].astype(np.float64)
    d2 = (yy[None] - centers[:, 0, None, None]) ** 2 + (xx[None] - centers[:, 1, None, None]) ** 2
    blobs = np.exp(-d2 / (2 * widths[:, None, None] ** 2))
    images = (2.0 * blobs - 1.0).astype(np.float32)[..., None]
    return Dataset(images, labels.astype(np.int64), n_classes, {"synthetic": "blobs", "seed": int(seed), "count": int(n)})
