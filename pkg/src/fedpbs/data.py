"""Datasets, loaders, and the Dirichlet label-skew partitioner.

Datasets are immutable (N, P) float64 feature matrices with 1-based
integer labels in 1..K. A Partition assigns every sample index to
exactly one client; client ids are 0-based.

The partitioner follows the standard label-skew recipe: for each class
k, a Q-dimensional Dirichlet(alpha, ..., alpha) draw fixes the fraction
of class-k samples each client receives; the class's samples are
shuffled and split contiguously by those fractions. Small alpha gives
each client one or two dominant classes; large alpha approaches a
uniform split.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .rng import substream


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labelled samples: features (N, P), labels (N,) in 1..num_classes."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    label_values: tuple | None = None  # original label values, index k-1 -> value

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise DataError(f"features must be a non-empty 2-d matrix, got shape {feats.shape}")
        if labs.shape != (feats.shape[0],):
            raise DataError(
                f"labels shape {labs.shape} does not match {feats.shape[0]} samples"
            )
        if not np.isfinite(feats).all():
            raise DataError("features contain NaN or Inf")
        if self.num_classes < 1:
            raise DataError(f"num_classes must be >= 1, got {self.num_classes}")
        if labs.min() < 1 or labs.max() > self.num_classes:
            raise DataError(
                f"labels must lie in 1..{self.num_classes}, got range "
                f"[{int(labs.min())}, {int(labs.max())}]"
            )
        object.__setattr__(self, "features", _freeze(feats))
        object.__setattr__(self, "labels", _freeze(labs))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        """Histogram over classes 1..K, index k-1 -> count."""
        return np.bincount(self.labels, minlength=self.num_classes + 1)[1:]


@dataclass(frozen=True)
class DirichletSpec:
    """Label-skew partition parameters: concentration, client count, seed."""

    alpha: float
    clients: int
    seed: int

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.clients < 1:
            raise ConfigError(f"clients must be >= 1, got {self.clients}")


@dataclass(frozen=True, eq=False)
class Partition:
    """Disjoint client -> sorted-sample-index assignment covering 0..n_total-1."""

    assignments: tuple
    n_total: int

    def __post_init__(self):
        arrays = tuple(_freeze(np.asarray(a, dtype=np.int64)) for a in self.assignments)
        object.__setattr__(self, "assignments", arrays)
        for q, arr in enumerate(arrays):
            if arr.size and (np.diff(arr) <= 0).any():
                raise ConfigError(f"client {q} index list is not strictly increasing")
        if arrays:
            union = np.concatenate(arrays)
        else:
            union = np.empty(0, dtype=np.int64)
        if union.size != self.n_total or not np.array_equal(
            np.sort(union), np.arange(self.n_total)
        ):
            raise ConfigError(
                "assignments must be disjoint and cover every sample exactly once"
            )

    @property
    def clients(self) -> int:
        return len(self.assignments)

    def client_sizes(self) -> np.ndarray:
        return np.array([a.size for a in self.assignments], dtype=np.int64)


def _largest_remainder(fractions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing exactly to ``total``, proportional to ``fractions``.

    Ties in the fractional remainders break toward the lowest index.
    """
    raw = fractions * total
    base = np.floor(raw).astype(np.int64)
    leftover = total - int(base.sum())
    if leftover:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:leftover]] += 1
    return base


def dirichlet_partition(
    data: Dataset, spec: DirichletSpec, min_one_sample: bool = True
) -> Partition:
    """Split ``data`` across ``spec.clients`` clients with Dirichlet label skew.

    Each class k uses its own RNG substream derived from (seed, k), so
    adding classes never perturbs earlier classes' splits. Fractional
    allocations become integer counts by largest-remainder rounding, so
    per-class totals are conserved exactly.

    With ``min_one_sample`` (default on), clients that end up empty
    receive one sample moved from the largest client (from its most
    frequent class, highest sample index first); turn it off to allow
    empty clients in the partition itself.
    """
    q_count = spec.clients
    counts = data.class_counts()
    if (counts < 1).any():
        missing = int(np.flatnonzero(counts == 0)[0]) + 1
        raise DataError(f"class {missing} has no samples; every class needs at least one")

    per_client: list[list[np.ndarray]] = [[] for _ in range(q_count)]
    for k in range(1, data.num_classes + 1):
        rng = substream(spec.seed, "class", k)
        idx = rng.permutation(np.flatnonzero(data.labels == k))
        shares = rng.dirichlet(np.full(q_count, spec.alpha))
        alloc = _largest_remainder(shares, idx.size)
        offset = 0
        for q in range(q_count):
            per_client[q].append(idx[offset : offset + alloc[q]])
            offset += alloc[q]

    assignments = [
        np.sort(np.concatenate(chunks)) if chunks else np.empty(0, dtype=np.int64)
        for chunks in per_client
    ]

    if min_one_sample:
        _rebalance_empty(assignments, data.labels)

    return Partition(tuple(assignments), data.n_samples)


def _rebalance_empty(assignments: list[np.ndarray], labels: np.ndarray) -> None:
    """Move one sample from the largest client into each empty client."""
    for q in range(len(assignments)):
        if assignments[q].size > 0:
            continue
        sizes = [a.size for a in assignments]
        donor = int(np.argmax(sizes))
        if sizes[donor] < 2:
            raise ConfigError(
                f"cannot guarantee one sample per client: client {q} is empty and "
                "no client has samples to spare"
            )
        donor_labels = labels[assignments[donor]]
        top_class = int(np.argmax(np.bincount(donor_labels)))
        pick = assignments[donor][donor_labels == top_class][-1]
        assignments[donor] = assignments[donor][assignments[donor] != pick]
        assignments[q] = np.array([pick], dtype=np.int64)


def partition_report(partition: Partition, data: Dataset) -> np.ndarray:
    """(Q, K) matrix of class counts per client.

    Row q, column k-1 holds the number of class-k samples on client q;
    row sums are client sizes and column sums the global class totals.
    """
    if partition.n_total != data.n_samples:
        raise ConfigError(
            f"partition covers {partition.n_total} samples but dataset has {data.n_samples}"
        )
    out = np.zeros((partition.clients, data.num_classes), dtype=np.int64)
    for q, idx in enumerate(partition.assignments):
        out[q] = np.bincount(data.labels[idx], minlength=data.num_classes + 1)[1:]
    return out


def partition_report_csv(matrix: np.ndarray) -> str:
    """Serialize a class-count matrix as ``client,class_1,...,class_K`` CSV."""
    k = matrix.shape[1]
    lines = ["client," + ",".join(f"class_{j + 1}" for j in range(k))]
    for q, row in enumerate(matrix):
        lines.append(f"{q}," + ",".join(str(int(c)) for c in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

UCIHAR_FEATURES = 561
UCIHAR_CLASSES = 6


def _read_ucihar_matrix(path: Path, expected_cols: int) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != expected_cols:
                raise DataError(
                    f"{path}: row {lineno}: expected {expected_cols} columns, "
                    f"got {len(parts)}"
                )
            rows.append(parts)
    if not rows:
        raise DataError(f"{path}: no data rows")
    try:
        return np.asarray(rows, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from exc


def _read_ucihar_labels(path: Path) -> np.ndarray:
    raw = _read_ucihar_matrix(path, 1).reshape(-1)
    labels = raw.astype(np.int64)
    if (labels != raw).any():
        bad = int(np.flatnonzero(labels != raw)[0]) + 1
        raise DataError(f"{path}: row {bad}: label is not an integer")
    if labels.min() < 1 or labels.max() > UCIHAR_CLASSES:
        bad = int(np.flatnonzero((labels < 1) | (labels > UCIHAR_CLASSES))[0]) + 1
        raise DataError(f"{path}: row {bad}: label outside 1..{UCIHAR_CLASSES}")
    return labels


def load_ucihar(root) -> tuple[Dataset, Dataset]:
    """Load the UCI-HAR archive from its standard on-disk layout.

    Expects ``train/X_train.txt`` (whitespace-separated, 561 values per
    row), ``train/y_train.txt`` (one label in 1..6 per row) and the
    ``test/`` counterparts below ``root``. Returns (train, test) with
    labels preserved as 1..6.
    """
    root = Path(root)
    out = []
    for split in ("train", "test"):
        x = _read_ucihar_matrix(root / split / f"X_{split}.txt", UCIHAR_FEATURES)
        y = _read_ucihar_labels(root / split / f"y_{split}.txt")
        if x.shape[0] != y.shape[0]:
            raise DataError(
                f"{root / split}: {x.shape[0]} feature rows vs {y.shape[0]} labels"
            )
        out.append(Dataset(x, y, UCIHAR_CLASSES))
    return out[0], out[1]


def load_csv(path, label_column: str) -> Dataset:
    """Load a rectangular numeric CSV with a header row.

    Every column except ``label_column`` becomes a feature (in header
    order). Labels must be integers and are remapped to contiguous 1..K
    preserving the sort order of the original values; the original
    values are recorded on the returned Dataset as ``label_values``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"{path}: no column named '{label_column}' in header")
        label_idx = header.index(label_column)
        width = len(header)

        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(
                    f"{path}: row {lineno}: expected {width} cells, got {len(row)}"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                raise DataError(f"{path}: row {lineno}: non-numeric cell") from None
            raw_label = values.pop(label_idx)
            if raw_label != int(raw_label):
                raise DataError(f"{path}: row {lineno}: label {raw_label} is not an integer")
            labels.append(int(raw_label))
            feats.append(values)

    if not feats:
        raise DataError(f"{path}: header but no data rows")

    uniques = sorted(set(labels))
    remap = {v: i + 1 for i, v in enumerate(uniques)}
    mapped = np.array([remap[v] for v in labels], dtype=np.int64)
    return Dataset(
        np.asarray(feats, dtype=np.float64),
        mapped,
        num_classes=len(uniques),
        label_values=tuple(uniques),
    )


def synth_clusters(
    features: int, classes: int, n_per_class: int, spread: float, seed: int
) -> Dataset:
    """Gaussian blobs with one unit-separated center per class.

    Center k sits on coordinate axis (k mod P) at magnitude 1 + k // P,
    so all pairwise center distances are at least 1. Deterministic in
    ``seed``. Labels come out grouped: n_per_class ones, then twos, ...
    """
    if features < 1 or classes < 1 or n_per_class < 1:
        raise ConfigError("features, classes and n_per_class must all be positive")
    if not spread > 0:
        raise ConfigError(f"spread must be > 0, got {spread}")
    rng = np.random.Generator(np.random.PCG64(seed))
    centers = np.zeros((classes, features))
    for k in range(classes):
        centers[k, k % features] = 1.0 + k // features
    labels = np.repeat(np.arange(1, classes + 1), n_per_class)
    x = centers[labels - 1] + spread * rng.standard_normal((labels.size, features))
    return Dataset(x, labels, num_classes=classes)


def standardize(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset]:
    """Per-feature zero-mean unit-variance scaling fit on the train split."""
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std > 0, std, 1.0)

    def apply(ds: Dataset) -> Dataset:
        return Dataset(
            (ds.features - mean) / std, ds.labels, ds.num_classes, ds.label_values
        )

    return apply(train), apply(test)
