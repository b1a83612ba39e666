"""Dataset ingestion, synthesis, client partitioning, and shadow sampling.

Supported on-disk formats:

* IDX (the MNIST convention): big-endian uint32 magic + dimension sizes,
  then raw unsigned bytes. Image files use magic 0x00000803 with dims
  (count, rows, cols); label files use 0x00000801 with dims (count,).
* CIFAR binary: fixed-size records of one label byte (ten-class variant)
  or two label bytes, coarse then fine (hundred-class variant, the fine
  label is kept), followed by 3072 pixel bytes.

Pixel bytes are scaled by 1/255 so every loaded feature lies in [0, 1].
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError
from .seeding import derive_seed

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_PIXELS = 3072


@dataclass
class LabeledDataset:
    """Feature matrix (N x d, float64) plus integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.ndim != 1 or len(self.labels) != self.features.shape[0]:
            raise InputError(
                f"labels length {self.labels.shape} does not match "
                f"{self.features.shape[0]} feature rows"
            )
        if self.class_count < 1:
            raise InputError(f"class_count must be >= 1, got {self.class_count}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InputError(
                f"labels must lie in [0, {self.class_count}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices], self.class_count)


@dataclass(frozen=True)
class DistributionSpec:
    """Where a dataset comes from: files on disk or a synthetic mixture."""

    source: str  # "idx_file" | "cifar_binary" | "synthetic_gaussian"
    images_path: str | None = None
    labels_path: str | None = None
    cifar_paths: tuple = ()
    cifar_variant: str = "cifar10"
    class_count: int = 10
    dim: int = 16
    means_seed: int = 0
    spread: float = 0.25

    def __post_init__(self):
        if self.source not in ("idx_file", "cifar_binary", "synthetic_gaussian"):
            raise InputError(f"unknown dataset source {self.source!r}")
        if self.source == "synthetic_gaussian":
            if self.spread <= 0:
                raise InputError(f"synthetic spread must be > 0, got {self.spread}")
            if self.class_count < 2 or self.dim < 1:
                raise InputError("synthetic datasets need class_count >= 2 and dim >= 1")


@dataclass
class ShadowDataset:
    """One shadow model's data: a seen (train) and unseen (test) split.

    When produced by `sample_shadow_datasets` the *_indices fields record
    which rows of the master dataset each split came from.
    """

    train: LabeledDataset
    test: LabeledDataset
    train_indices: np.ndarray | None = None
    test_indices: np.ndarray | None = None

    def __post_init__(self):
        if self.train_indices is not None and self.test_indices is not None:
            overlap = np.intersect1d(self.train_indices, self.test_indices)
            if overlap.size:
                raise InputError(f"shadow train/test splits share indices {overlap[:5]}")


def _read_exact(fh, n, path, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated while reading {what} ({len(data)}/{n} bytes)")
    return data


def load_idx(images_path, labels_path, class_count: int | None = None) -> LabeledDataset:
    """Load an IDX image/label file pair into a flattened dataset.

    class_count defaults to max(label) + 1.
    """
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{images_path}: image magic 0x{magic:08x} != 0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = _read_exact(fh, count * rows * cols, images_path, "pixel data")
    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, labels_path, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"{labels_path}: label magic 0x{magic:08x} != 0x{IDX_LABELS_MAGIC:08x}"
            )
        label_raw = _read_exact(fh, label_count, labels_path, "label data")
    if label_count != count:
        raise FormatError(
            f"label count {label_count} ({labels_path}) does not match image count {count}"
        )
    features = np.frombuffer(raw, dtype=np.uint8).astype(np.float64).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(label_raw, dtype=np.uint8).astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if count else 1
    return LabeledDataset(features, labels, class_count)


def write_idx(dataset: LabeledDataset, images_path, labels_path) -> None:
    """Write a dataset as an IDX pair, quantizing features to bytes.

    Feature values are clipped to [0, 1] and rounded to the nearest
    1/255 step, so a load_idx round trip reproduces them within 1/255.
    """
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    n, d = pixels.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, 1, d))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def load_cifar_binary(paths, variant: str = "cifar10") -> LabeledDataset:
    """Load one or more CIFAR binary batch files.

    variant "cifar10": records of 1 label byte + 3072 pixels, 10 classes.
    variant "cifar100": 2 label bytes (coarse, fine) + 3072 pixels; the
    fine label is used, 100 classes.
    """
    if variant == "cifar10":
        label_bytes, class_count = 1, 10
    elif variant == "cifar100":
        label_bytes, class_count = 2, 100
    else:
        raise InputError(f"unknown CIFAR variant {variant!r}")
    record = label_bytes + CIFAR_PIXELS
    if isinstance(paths, (str, bytes, os.PathLike)):
        paths = [paths]
    feature_parts, label_parts = [], []
    for path in paths:
        with open(path, "rb") as fh:
            raw = fh.read()
        if not raw or len(raw) % record:
            raise FormatError(
                f"{path}: length {len(raw)} is not a positive multiple of record size {record}"
            )
        block = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        label_parts.append(block[:, label_bytes - 1].astype(np.int64))
        feature_parts.append(block[:, label_bytes:].astype(np.float64) / 255.0)
    return LabeledDataset(np.vstack(feature_parts), np.concatenate(label_parts), class_count)


def synthesize_gaussian(spec: DistributionSpec, n: int, seed: int) -> LabeledDataset:
    """Draw n points from an isotropic Gaussian mixture, one blob per class.

    Class means are uniform in [0,1]^dim, fixed by spec.means_seed so
    repeated draws come from the same distribution; `seed` drives the
    sample noise. Classes are balanced within +-1 and values clipped to
    [0, 1].
    """
    if spec.source != "synthetic_gaussian":
        raise InputError(f"spec source is {spec.source!r}, not synthetic_gaussian")
    if n < spec.class_count:
        raise InputError(f"n={n} is smaller than class_count={spec.class_count}")
    means = np.random.default_rng(spec.means_seed).uniform(0.0, 1.0, (spec.class_count, spec.dim))
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % spec.class_count
    features = means[labels] + rng.standard_normal((n, spec.dim)) * spec.spread
    np.clip(features, 0.0, 1.0, out=features)
    return LabeledDataset(features, labels, spec.class_count)


def partition_disjoint(dataset: LabeledDataset, n_clients: int, seed: int) -> list[LabeledDataset]:
    """Split a dataset into n_clients disjoint IID shards.

    The index set is shuffled by `seed` and cut into shards whose sizes
    differ by at most one; the first len(dataset) % n_clients shards get
    the extra sample.
    """
    n = len(dataset)
    if not 1 <= n_clients <= n:
        raise InputError(f"n_clients={n_clients} out of range [1, {n}]")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, n_clients)
    shards, start = [], 0
    for i in range(n_clients):
        size = base + (1 if i < extra else 0)
        shards.append(dataset.subset(perm[start:start + size]))
        start += size
    return shards


def sample_shadow_datasets(
    master: LabeledDataset,
    k: int,
    shadow_size: int,
    train_fraction: float,
    seed: int,
) -> list[ShadowDataset]:
    """Sample k overlapping shadow datasets from a master pool.

    Each shadow dataset is shadow_size rows drawn without replacement
    from the master (different shadows may overlap each other), split
    into train/test at round(train_fraction * shadow_size). Any two
    shadow index sets are guaranteed to differ.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if not 2 <= shadow_size <= len(master):
        raise InputError(
            f"shadow_size={shadow_size} out of range [2, {len(master)}]"
        )
    if not 0.0 < train_fraction < 1.0:
        raise InputError(f"train_fraction must be in (0, 1), got {train_fraction}")
    train_size = int(round(train_fraction * shadow_size))
    train_size = min(max(train_size, 1), shadow_size - 1)

    shadows: list[ShadowDataset] = []
    seen: set[bytes] = set()
    for i in range(k):
        for attempt in range(100):
            rng = np.random.default_rng(derive_seed(seed, "shadow", i, attempt))
            indices = rng.choice(len(master), size=shadow_size, replace=False)
            key = np.sort(indices).tobytes()
            if key not in seen or shadow_size == len(master):
                break
        else:  # pragma: no cover - requires a pathological master/shadow ratio
            raise InputError(f"could not draw a distinct index set for shadow {i}")
        seen.add(key)
        train_idx, test_idx = indices[:train_size], indices[train_size:]
        shadows.append(
            ShadowDataset(
                train=master.subset(train_idx),
                test=master.subset(test_idx),
                train_indices=train_idx,
                test_indices=test_idx,
            )
        )
    return shadows
