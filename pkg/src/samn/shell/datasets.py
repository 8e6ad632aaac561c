"""Dataset ingestion: IDX binary files, the bundled real-digits set, and
deterministic synthetic datasets for desk-scale diffusion experiments."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedPayloadError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass
class LabeledDataset:
    """Images as an (n, d) matrix in [0, 1] with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels count mismatch")
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.class_count
        ):
            raise ValueError("labels out of range for class_count")

    @property
    def dim(self):
        return self.images.shape[1]

    def partition(self, forget_classes):
        """Disjoint, exhaustive masks for the forget and remember subsets."""
        forget_classes = set(int(c) for c in forget_classes)
        forget_mask = np.isin(self.labels, sorted(forget_classes))
        return forget_mask, ~forget_mask

    def subset(self, mask):
        return LabeledDataset(self.images[mask], self.labels[mask], self.class_count)

    def split(self, holdout_fraction, seed=0):
        """(train, holdout) split, shuffled deterministically."""
        rng = np.random.default_rng(seed)
        perm = rng.permutation(self.images.shape[0])
        n_hold = int(round(self.images.shape[0] * holdout_fraction))
        hold, train = perm[:n_hold], perm[n_hold:]
        return self.subset(train), self.subset(hold)


def _read_be_u32(f, path):
    data = f.read(4)
    if len(data) != 4:
        raise TruncatedPayloadError(f"{path}: truncated header")
    return struct.unpack(">I", data)[0]


def load_idx_dataset(images_path, labels_path):
    """MNIST-style big-endian IDX pair; pixels scaled to [0, 1] by /255."""
    with open(images_path, "rb") as f:
        magic = _read_be_u32(f, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise BadMagicError(
                f"{images_path}: wrong magic 0x{magic:08x}, expected image magic"
            )
        count = _read_be_u32(f, images_path)
        rows = _read_be_u32(f, images_path)
        cols = _read_be_u32(f, images_path)
        payload = f.read()
        if len(payload) < count * rows * cols:
            raise TruncatedPayloadError(f"{images_path}: truncated pixel payload")
        pixels = np.frombuffer(payload[: count * rows * cols], dtype=np.uint8)
        images = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    with open(labels_path, "rb") as f:
        magic = _read_be_u32(f, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise BadMagicError(
                f"{labels_path}: wrong magic 0x{magic:08x}, expected label magic"
            )
        label_count = _read_be_u32(f, labels_path)
        payload = f.read()
        if len(payload) < label_count:
            raise TruncatedPayloadError(f"{labels_path}: truncated label payload")
        labels = np.frombuffer(payload[:label_count], dtype=np.uint8).astype(int)
    if count != label_count:
        raise CountMismatchError(
            f"image count {count} != label count {label_count}"
        )
    return LabeledDataset(images, labels, class_count=int(labels.max()) + 1 if count else 10)


def load_builtin_digits():
    """The bundled real handwritten-digits set (8x8, 10 classes), scaled to
    [0, 1]; the offline stand-in for MNIST-scale experiments."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    return LabeledDataset(raw.data / 16.0, raw.target, class_count=10)


# 8x8 binary shape templates; visually distinct and linearly separable.
_SHAPE_TEMPLATES = {}


def _shape_template(kind):
    if kind in _SHAPE_TEMPLATES:
        return _SHAPE_TEMPLATES[kind]
    g = np.zeros((8, 8))
    if kind == 0:  # hollow square
        g[1:7, 1] = g[1:7, 6] = 1.0
        g[1, 1:7] = g[6, 1:7] = 1.0
    elif kind == 1:  # diagonal cross
        for i in range(8):
            g[i, i] = g[i, 7 - i] = 1.0
    elif kind == 2:  # horizontal stripes
        g[1] = g[4] = g[7] = 1.0
    elif kind == 3:  # filled disc
        yy, xx = np.mgrid[0:8, 0:8]
        g[(yy - 3.5) ** 2 + (xx - 3.5) ** 2 <= 6.5] = 1.0
    elif kind == 4:  # vertical stripes
        g[:, 1] = g[:, 4] = g[:, 7] = 1.0
    else:
        raise ValueError("shapes dataset supports at most 5 classes")
    _SHAPE_TEMPLATES[kind] = g.ravel()
    return _SHAPE_TEMPLATES[kind]


def make_synthetic_dataset(kind, class_count, n_per_class, seed=0):
    """Deterministic separable datasets: "shapes-8x8" (64-dim images) or
    "gaussian-mixture-2d" (centers on the unit circle)."""
    if class_count < 2:
        raise ValueError("class_count must be >= 2")
    rng = np.random.default_rng(seed)
    if kind == "shapes-8x8":
        images, labels = [], []
        for c in range(class_count):
            template = _shape_template(c)
            amp = rng.uniform(0.7, 1.0, size=(n_per_class, 1))
            noise = rng.normal(0.0, 0.08, size=(n_per_class, 64))
            images.append(np.clip(template[None, :] * amp + noise, 0.0, 1.0))
            labels.append(np.full(n_per_class, c, dtype=int))
        return LabeledDataset(
            np.concatenate(images), np.concatenate(labels), class_count
        )
    if kind == "gaussian-mixture-2d":
        angles = 2.0 * np.pi * np.arange(class_count) / class_count
        centers = 0.5 + 0.35 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        images, labels = [], []
        for c in range(class_count):
            pts = centers[c] + rng.normal(0.0, 0.05, size=(n_per_class, 2))
            images.append(np.clip(pts, 0.0, 1.0))
            labels.append(np.full(n_per_class, c, dtype=int))
        return LabeledDataset(
            np.concatenate(images), np.concatenate(labels), class_count
        )
    raise ValueError(f"unknown synthetic dataset kind {kind!r}")
