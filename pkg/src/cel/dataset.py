"""Labeled classification datasets: ingestion, synthetic blobs, partitioning, splits.

Features are float64 arrays of shape (n, d); labels are int64 in [0, M).
Original label values are kept in ``class_names`` for reporting.
"""

from __future__ import annotations

import csv
import itertools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    pass


class Sample(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DatasetError("labels must be 1-D with one entry per sample")
        if self.num_classes < 2:
            raise DatasetError(f"need at least 2 classes, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DatasetError("label out of range [0, num_classes)")
        if not np.all(np.isfinite(features)):
            raise DatasetError("features contain NaN or Inf")
        names = tuple(self.class_names) or tuple(str(m) for m in range(self.num_classes))
        if len(names) != self.num_classes:
            raise DatasetError("class_names length must equal num_classes")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.features[i], int(self.labels[i]))

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes, self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ClassPartition:
    per_class: tuple[np.ndarray, ...]

    @property
    def num_classes(self) -> int:
        return len(self.per_class)

    def counts(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.per_class], dtype=np.int64)

    def total(self) -> int:
        return int(self.counts().sum())


@dataclass
class BlobSpec:
    """Gaussian-blob benchmark description.

    If ``class_means`` is empty the means are placed automatically: each
    overlap pair shares an anchor (partner offset by ``overlap_offset`` stddevs)
    and anchors sit on a lattice with spacing ``7 * class_stddev``.
    """

    num_classes: int
    per_class_count: int
    feature_dim: int
    class_stddev: float = 1.0
    class_means: list[list[float]] = field(default_factory=list)
    overlap_pairs: list[tuple[int, int]] = field(default_factory=list)
    overlap_offset: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.overlap_pairs = [tuple(int(c) for c in p) for p in self.overlap_pairs]
        if self.num_classes < 2:
            raise DatasetError("num_classes must be >= 2")
        if self.per_class_count < 1:
            raise DatasetError("per_class_count must be >= 1")
        if self.feature_dim < 1:
            raise DatasetError("feature_dim must be >= 1")
        if not self.class_stddev > 0:
            raise DatasetError("class_stddev must be > 0")
        if not 0 < self.overlap_offset <= 1:
            raise DatasetError("overlap_offset must lie in (0, 1]")


def partition_by_class(ds: LabeledDataset) -> ClassPartition:
    idx = np.arange(len(ds))
    return ClassPartition(tuple(idx[ds.labels == m] for m in range(ds.num_classes)))


def _label_vocabulary(raw: Sequence[str]) -> tuple[list[str], dict[str, int]]:
    uniq = list(dict.fromkeys(raw))
    try:
        uniq = sorted(uniq, key=int)
    except ValueError:
        pass
    return uniq, {v: i for i, v in enumerate(uniq)}


def load_csv(path, label_column: str) -> LabeledDataset:
    """Read a header-first CSV; every column except ``label_column`` is a feature."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such CSV file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if label_column not in header:
        raise DatasetError(f"{path}: no column named {label_column!r}")
    li = header.index(label_column)
    feats, raw_labels = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{lineno}: ragged row ({len(row)} cells, expected {len(header)})")
        try:
            feats.append([float(c) for j, c in enumerate(row) if j != li])
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: non-numeric feature cell ({exc})") from None
        raw_labels.append(row[li].strip())
    names, index = _label_vocabulary(raw_labels)
    if len(names) < 2:
        raise DatasetError(f"{path}: need at least 2 distinct labels, found {len(names)}")
    features = np.array(feats, dtype=np.float64).reshape(len(body), len(header) - 1)
    labels = np.array([index[v] for v in raw_labels], dtype=np.int64)
    return LabeledDataset(features, labels, len(names), tuple(names))


def save_csv(ds: LabeledDataset, path, label_column: str = "label") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([label_column] + [f"x{j}" for j in range(ds.feature_dim)])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([ds.class_names[y]] + [repr(float(v)) for v in x])


def _read_idx(path: Path, magic: int) -> np.ndarray:
    data = path.read_bytes()
    if len(data) < 4:
        raise DatasetError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", data[:4])
    if got != magic:
        raise DatasetError(f"{path}: bad magic number 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise DatasetError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = math.prod(dims)
    if len(data) - header < size:
        raise DatasetError(f"{path}: truncated payload ({len(data) - header} of {size} bytes)")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> LabeledDataset:
    """MNIST-style IDX pair; pixels are scaled to [0, 1] and flattened."""
    images = _read_idx(Path(images_path), IDX_IMAGES_MAGIC)
    raw = _read_idx(Path(labels_path), IDX_LABELS_MAGIC)
    if images.shape[0] != raw.shape[0]:
        raise DatasetError(f"image/label count mismatch: {images.shape[0]} images, {raw.shape[0]} labels")
    names, index = _label_vocabulary([str(v) for v in raw])
    labels = np.array([index[str(v)] for v in raw], dtype=np.int64)
    if len(names) < 2:
        raise DatasetError(f"{labels_path}: need at least 2 distinct labels, found {len(names)}")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(features, labels, len(names), tuple(names))


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _lattice(count: int, dim: int) -> np.ndarray:
    side = 1
    while side**dim < count:
        side += 1
    pts = np.array(list(itertools.islice(itertools.product(range(side), repeat=dim), count)), dtype=np.float64)
    return pts - pts.mean(axis=0)


def blob_means(spec: BlobSpec) -> np.ndarray:
    M, d, sd = spec.num_classes, spec.feature_dim, spec.class_stddev
    if spec.class_means:
        means = np.asarray(spec.class_means, dtype=np.float64)
        if means.shape != (M, d):
            raise DatasetError(f"class_means must have shape ({M}, {d}), got {means.shape}")
    else:
        partner: dict[int, int] = {}
        for a, b in spec.overlap_pairs:
            if not (0 <= a < M and 0 <= b < M) or a == b:
                raise DatasetError(f"invalid overlap pair ({a}, {b})")
            if a in partner or b in partner:
                # a chain a-b-c forces |a - c| <= 2 stddev, violating the 6 stddev rule
                raise DatasetError(f"class in more than one overlap pair: ({a}, {b}); placement unsatisfiable")
            partner[a], partner[b] = b, a
        anchors = [m for m in range(M) if m not in partner or partner[m] > m]
        grid = _lattice(len(anchors), d) * (7.0 * sd)
        means = np.zeros((M, d))
        offset = np.zeros(d)
        offset[0] = spec.overlap_offset * sd
        for pos, m in zip(grid, anchors):
            means[m] = pos
            if m in partner:
                means[partner[m]] = pos + offset
    _check_separation(means, spec)
    return means


def _check_separation(means: np.ndarray, spec: BlobSpec) -> None:
    close = {frozenset(p) for p in spec.overlap_pairs}
    sd = spec.class_stddev
    for a, b in itertools.combinations(range(spec.num_classes), 2):
        dist = float(np.linalg.norm(means[a] - means[b]))
        if frozenset((a, b)) in close:
            if dist > sd:
                raise DatasetError(f"overlap pair ({a}, {b}) means are {dist:.3g} apart (> stddev)")
        elif dist < 6 * sd:
            raise DatasetError(f"classes {a}, {b} means are {dist:.3g} apart (< 6 stddev)")


def generate_blobs(spec: BlobSpec) -> LabeledDataset:
    means = blob_means(spec)
    rng = np.random.default_rng(spec.seed)
    n = spec.per_class_count
    noise = rng.standard_normal((spec.num_classes, n, spec.feature_dim))
    features = (means[:, None, :] + spec.class_stddev * noise).reshape(-1, spec.feature_dim)
    labels = np.repeat(np.arange(spec.num_classes), n)
    return LabeledDataset(features, labels, spec.num_classes)


def split_train_test(ds: LabeledDataset, test_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; each class sends round-half-up(N_m * fraction) samples to test."""
    if not 0 < test_fraction < 1:
        raise DatasetError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for m, members in enumerate(partition_by_class(ds).per_class):
        n = len(members)
        if n < 2:
            raise DatasetError(f"class {ds.class_names[m]!r} has {n} sample(s); need >= 2 to stratify")
        n_test = min(max(math.floor(n * test_fraction + 0.5), 1), n - 1)
        perm = rng.permutation(members)
        test_idx.append(perm[:n_test])
        train_idx.append(perm[n_test:])
    return ds.subset(np.sort(np.concatenate(train_idx))), ds.subset(np.sort(np.concatenate(test_idx)))
