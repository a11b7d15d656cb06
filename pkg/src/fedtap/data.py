"""Dataset ingestion and the linear example-crafting transforms.

Features are float64 vectors in [0, 1]. Image datasets are row-major
flattened side*side pixel grids; the two mix transforms split rows
(vertical) or columns (horizontal) of that grid.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int
    source_id: int | None = None


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) float64 in [0, 1]
    labels: np.ndarray    # (n,) int64 in [0, n_classes)
    n_classes: int
    source_ids: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels must align as (n, d) and (n,)")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def example(self, i: int) -> LabeledExample:
        sid = None if self.source_ids is None else int(self.source_ids[i])
        return LabeledExample(self.features[i], int(self.labels[i]), sid)

    def subset(self, idx) -> "Dataset":
        sids = None if self.source_ids is None else self.source_ids[idx]
        return Dataset(self.features[idx], self.labels[idx], self.n_classes, sids)


def _open_maybe_gz(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def load_idx(images_path, labels_path) -> Dataset:
    """Parse big-endian IDX image/label files (optionally .gz) into a Dataset.

    Pixels are scaled from bytes to [0, 1] by /255.
    """
    with _open_maybe_gz(images_path) as f:
        magic, count, rows, cols = struct.unpack(">IIII", f.read(16))
        if magic != IMAGE_MAGIC:
            raise ValueError(f"bad magic 0x{magic:08x} in image file {images_path}")
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise ValueError(f"truncated image file {images_path}")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    with _open_maybe_gz(labels_path) as f:
        magic, label_count = struct.unpack(">II", f.read(8))
        if magic != LABEL_MAGIC:
            raise ValueError(f"bad magic 0x{magic:08x} in label file {labels_path}")
        raw = f.read(label_count)
        if len(raw) != label_count:
            raise ValueError(f"truncated label file {labels_path}")
        labels = np.frombuffer(raw, dtype=np.uint8)
    if count != label_count:
        raise ValueError(f"image/label count mismatch: {count} vs {label_count}")
    features = images.astype(np.float64) / 255.0
    n_classes = int(labels.max()) + 1 if label_count else 0
    return Dataset(features, labels.astype(np.int64), n_classes,
                   source_ids=np.arange(count))


def _separated_anchors(rng, n_classes: int, d: int) -> np.ndarray:
    """Draw anchor points with a minimum pairwise distance so the blobs are
    separable regardless of seed; the threshold relaxes if packing fails."""
    threshold = min(0.6, 0.25 * np.sqrt(d))
    for attempt in range(2000):
        anchors = rng.uniform(0.0, 1.0, size=(n_classes, d))
        if n_classes == 1:
            return anchors
        diff = anchors[:, None, :] - anchors[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= threshold:
            return anchors
        if attempt % 200 == 199:
            threshold *= 0.5
    return anchors


def make_synthetic(d: int, n_classes: int, n: int, seed: int,
                   spread: float = 0.08) -> Dataset:
    """Gaussian blobs around distinct anchor patterns in [0, 1]^d, clipped.

    Anchors are smoothed random patterns rather than pure noise so that
    row/column mixes of two examples still look class-structured; a small
    MLP separates the blobs easily.
    """
    if n < n_classes:
        raise ValueError(f"need at least one example per class ({n} < {n_classes})")
    rng = np.random.default_rng(seed)
    anchors = _separated_anchors(rng, n_classes, d)
    side = int(np.sqrt(d))
    if side * side == d and side >= 4:
        # treat anchors as images and blur them coarsely row- and column-wise
        a = anchors.reshape(n_classes, side, side)
        kernel = np.ones(3) / 3.0
        for axis in (1, 2):
            a = np.apply_along_axis(
                lambda v: np.convolve(v, kernel, mode="same"), axis, a)
        anchors = a.reshape(n_classes, d)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    noise = rng.normal(0.0, spread, size=(n, d))
    features = np.clip(anchors[labels] + noise, 0.0, 1.0)
    return Dataset(features, labels, n_classes, source_ids=np.arange(n))


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Seeded subsample without replacement, preserving source ids."""
    if n >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(dataset), size=n, replace=False)
    return dataset.subset(np.sort(idx))


def partition(dataset: Dataset, n_parts: int, seed: int) -> list[Dataset]:
    """Disjoint uniform shards whose sizes differ by at most one."""
    if n_parts < 1:
        raise ValueError("need at least one shard")
    if n_parts > len(dataset):
        raise ValueError(f"cannot split {len(dataset)} examples into {n_parts} shards")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    return [dataset.subset(np.sort(chunk)) for chunk in np.array_split(order, n_parts)]


class TransformKind(Enum):
    ERASE = "erase"
    VMIX = "vmix"
    HMIX = "hmix"

    @property
    def arity(self) -> int:
        return 1 if self is TransformKind.ERASE else 2


def transform(kind: TransformKind, inputs, alpha: float,
              image_side: int | None = None) -> np.ndarray:
    """Apply one of the linear crafting transforms.

    ERASE zeroes the first floor(alpha*d) entries of a single vector.
    VMIX takes the first floor(alpha*side) rows from x1 and the rest from x2;
    HMIX does the same with columns. Fragment boundaries use floor.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    vecs = [np.asarray(v, dtype=np.float64) for v in inputs]
    if len(vecs) != kind.arity:
        raise ValueError(f"{kind.value} takes {kind.arity} input(s), got {len(vecs)}")

    if kind is TransformKind.ERASE:
        x = vecs[0]
        cut = int(np.floor(alpha * x.shape[0]))
        out = x.copy()
        out[:cut] = 0.0
        return out

    x1, x2 = vecs
    if x1.shape != x2.shape:
        raise ValueError("mix inputs must have equal length")
    d = x1.shape[0]
    side = image_side if image_side is not None else int(np.sqrt(d))
    if side * side != d:
        raise ValueError(f"mixes need square images, got d={d} side={side}")
    rows = int(np.floor(alpha * side))
    a = x1.reshape(side, side)
    b = x2.reshape(side, side)
    out = b.copy()
    if kind is TransformKind.VMIX:
        out[:rows, :] = a[:rows, :]
    else:
        out[:, :rows] = a[:, :rows]
    return out.reshape(d)
