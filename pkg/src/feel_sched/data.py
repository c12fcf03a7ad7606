"""Synthetic dataset generation, IDX ingestion, and non-IID partitioning.

Datasets are plain `learners.Dataset` batches. Partitioning is fully
deterministic given (samples, K, PartitionSpec); the resulting
`FleetDatasets` is immutable in spirit and safe to share across readers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from .learners import Dataset, DatasetLike

__all__ = [
    "FleetDatasets",
    "PartitionSpec",
    "RegressionTask",
    "BinaryMarginTask",
    "IdxFormatError",
    "generate_synthetic",
    "partition",
    "load_idx",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised when an IDX file is malformed; the message names the file."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class FleetDatasets:
    """Per-device datasets plus the derived size bookkeeping."""

    per_device: List[Tuple[int, Dataset]]

    def __post_init__(self):
        ids = [device_id for device_id, _ in self.per_device]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("device ids must be 1..K in order")
        if any(len(ds) == 0 for _, ds in self.per_device):
            raise ValueError("every device needs at least one sample")

    @property
    def device_count(self) -> int:
        return len(self.per_device)

    @property
    def datasets(self) -> List[Dataset]:
        return [ds for _, ds in self.per_device]

    @property
    def n_k(self) -> List[int]:
        return [len(ds) for _, ds in self.per_device]

    @property
    def n(self) -> int:
        return sum(self.n_k)

    def pooled(self) -> Dataset:
        feats = np.concatenate([ds.features for ds in self.datasets])
        labels = np.concatenate([np.asarray(ds.labels) for ds in self.datasets])
        return Dataset(feats, labels)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split one sample pool across K devices.

    scheme: "iid_uniform", "label_sorted_shards", or "two_class_split".
    For label_sorted_shards the shard count must equal
    K * shards_per_device so that dealing conserves every sample.
    """

    scheme: str
    seed: int
    shards_per_device: int = 2
    shard_count: Optional[int] = None


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegressionTask:
    """y = w_true . x + N(0, noise_sd^2), x ~ N(0, I_dim)."""

    dim: int
    noise_sd: float = 0.0
    true_w_seed: int = 0


@dataclass(frozen=True)
class BinaryMarginTask:
    """Two unit-variance Gaussian blobs at +/- (separation/2) along a fixed
    random unit direction; labels in {-1, +1}, balanced.

    The direction comes from `direction_seed` so that independently drawn
    splits (train/test) share the same class geometry.
    """

    dim: int
    separation: float
    direction_seed: int = 0


SyntheticTask = Union[RegressionTask, BinaryMarginTask]


def generate_synthetic(task: SyntheticTask, total_n: int, seed: int) -> Dataset:
    """Draw a deterministic synthetic dataset of `total_n` samples."""
    if total_n < 1:
        raise ValueError("total_n must be >= 1")
    if task.dim < 1:
        raise ValueError("feature dimension must be >= 1")
    rng = np.random.default_rng(seed)
    if isinstance(task, RegressionTask):
        w_true = np.random.default_rng(task.true_w_seed).standard_normal(task.dim)
        x = rng.standard_normal((total_n, task.dim))
        noise = task.noise_sd * rng.standard_normal(total_n) if task.noise_sd > 0 else 0.0
        y = x @ w_true + noise
        return Dataset(x, y)
    if isinstance(task, BinaryMarginTask):
        direction = np.random.default_rng(task.direction_seed).standard_normal(task.dim)
        direction /= np.linalg.norm(direction)
        labels = np.ones(total_n)
        labels[total_n // 2:] = -1.0
        rng.shuffle(labels)
        x = rng.standard_normal((total_n, task.dim))
        x += np.outer(labels * (task.separation / 2.0), direction)
        return Dataset(x, labels)
    raise TypeError(f"unsupported synthetic task: {task!r}")


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

def partition(samples: DatasetLike, device_count: int, spec: PartitionSpec) -> FleetDatasets:
    """Assign every sample to exactly one of `device_count` devices."""
    pool = Dataset.coerce(samples)
    if device_count < 1:
        raise ValueError("device_count must be >= 1")
    if len(pool) < device_count:
        raise ValueError(
            f"cannot split {len(pool)} samples across {device_count} devices"
        )
    rng = np.random.default_rng(spec.seed)

    if spec.scheme == "iid_uniform":
        order = rng.permutation(len(pool))
        chunks = np.array_split(order, device_count)
    elif spec.scheme == "label_sorted_shards":
        chunks = _label_sorted_shard_chunks(pool, device_count, spec, rng)
    elif spec.scheme == "two_class_split":
        chunks = _two_class_chunks(pool, device_count, rng)
    else:
        raise ValueError(f"unknown partition scheme: {spec.scheme!r}")

    per_device = [
        (idx + 1, pool.subset(np.sort(chunk))) for idx, chunk in enumerate(chunks)
    ]
    return FleetDatasets(per_device)


def _label_sorted_shard_chunks(pool, device_count, spec, rng):
    shard_count = spec.shard_count
    if shard_count is None:
        shard_count = device_count * spec.shards_per_device
    if shard_count != device_count * spec.shards_per_device:
        raise ValueError(
            "shard_count must equal device_count * shards_per_device "
            f"({device_count} * {spec.shards_per_device}), got {shard_count}"
        )
    if len(pool) < shard_count:
        raise ValueError(f"{len(pool)} samples cannot fill {shard_count} shards")
    order = np.argsort(np.asarray(pool.labels), kind="stable")
    shards = np.array_split(order, shard_count)
    shard_order = rng.permutation(shard_count)
    chunks = [[] for _ in range(device_count)]
    for deal_pos, shard_idx in enumerate(shard_order):
        chunks[deal_pos % device_count].append(shards[shard_idx])
    return [np.concatenate(c) for c in chunks]


def _two_class_chunks(pool, device_count, rng):
    labels = np.asarray(pool.labels)
    classes = np.unique(labels)
    if len(classes) > device_count:
        raise ValueError(
            f"{len(classes)} classes cannot each own a device among {device_count}"
        )
    # Device k (1-based) serves class (k-1) mod n_classes; samples of each
    # class are shuffled once and split near-equally among its devices.
    chunks: List[np.ndarray] = [None] * device_count
    for class_pos, label in enumerate(classes):
        owners = list(range(class_pos, device_count, len(classes)))
        members = np.flatnonzero(labels == label)
        if len(members) < len(owners):
            raise ValueError(
                f"class {label!r} has {len(members)} samples for {len(owners)} devices"
            )
        members = members[rng.permutation(len(members))]
        for owner, part in zip(owners, np.array_split(members, len(owners))):
            chunks[owner] = part
    return chunks


# ---------------------------------------------------------------------------
# IDX ingestion
# ---------------------------------------------------------------------------

def _read_exact(handle, count: int, path: str) -> bytes:
    blob = handle.read(count)
    if len(blob) != count:
        raise IdxFormatError(f"{path}: truncated file (wanted {count} more bytes)")
    return blob


def load_idx(images_path: str, labels_path: str, subsample_n: int, seed: int) -> Dataset:
    """Load an IDX image/label pair, scale pixels to [0, 1], subsample.

    The index order of the subsample is ascending, so subsample_n equal to
    the full count reproduces the original order.
    """
    with open(images_path, "rb") as handle:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(handle, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(
                f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = _read_exact(handle, count * rows * cols, images_path)
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as handle:
        magic, label_count = struct.unpack(">II", _read_exact(handle, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        labels = np.frombuffer(_read_exact(handle, label_count, labels_path), dtype=np.uint8)

    if count != label_count:
        raise IdxFormatError(
            f"{labels_path}: {label_count} labels but {images_path} has {count} images"
        )
    if not 1 <= subsample_n <= count:
        raise ValueError(f"subsample_n must be in [1, {count}], got {subsample_n}")

    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(count, size=subsample_n, replace=False))
    feats = images[picks].astype(np.float64) / 255.0
    return Dataset(feats, labels[picks].astype(np.int64))
