"""Synthetic classification data, client partitioning, and label noise.

The generator draws one Gaussian blob per class around class means that are
themselves drawn once from the seed, so the task is linearly-ish separable
but not trivially so.  Partitioning is either IID round-robin or the usual
per-class Dirichlet split that skews class proportions across clients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Dirichlet draws occasionally starve a client of samples outright; we
# redraw a bounded number of times before repairing by hand.
_MAX_PARTITION_ATTEMPTS = 100


class DataError(ValueError):
    """Invalid dataset shape or partitioning request."""


@dataclass(frozen=True)
class LabeledDataset:
    """A fixed design matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DataError(
                f"labels shape {labels.shape} does not match "
                f"{features.shape[0]} samples"
            )
        if self.n_classes < 2:
            raise DataError(f"need at least two classes, got {self.n_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DataError(
                f"labels must lie in 0..{self.n_classes - 1}, "
                f"got range [{labels.min()}, {labels.max()}]"
            )
        if not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite values")
        features = features.copy()
        labels = labels.copy()
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class SyntheticSpec:
    """Sizing knobs for generated data.

    ``separation`` is the scale of the class means relative to the unit
    within-class noise; it controls how hard the task is and thereby how
    long a federation keeps learning.
    """

    n_classes: int = 4
    dim: int = 20
    samples_per_client: int = 30
    test_samples_per_class: int = 100
    separation: float = 0.8

    def __post_init__(self):
        if self.n_classes < 2:
            raise DataError(f"need at least two classes, got {self.n_classes}")
        if self.dim < 1:
            raise DataError(f"feature dimension must be positive, got {self.dim}")
        if self.samples_per_client < 1:
            raise DataError("samples_per_client must be positive")
        if self.test_samples_per_class < 1:
            raise DataError("test_samples_per_class must be positive")
        if not (self.separation > 0 and np.isfinite(self.separation)):
            raise DataError(f"separation must be positive, got {self.separation}")


def generate_synthetic(
    spec: SyntheticSpec, n_clients: int, seed
) -> tuple[LabeledDataset, LabeledDataset]:
    """Draw a train pool and a class-balanced test set.

    The train pool holds spec.samples_per_client * n_clients samples split
    as evenly as possible across classes, shuffled so downstream IID splits
    do not see class-sorted order.  Identical (spec, n_clients, seed) give
    bit-identical datasets.
    """
    if n_clients < 1:
        raise DataError(f"need at least one client, got {n_clients}")
    rng = np.random.default_rng(seed)
    k, d = spec.n_classes, spec.dim
    means = rng.normal(0.0, spec.separation, size=(k, d))

    n_train = spec.samples_per_client * n_clients
    base, extra = divmod(n_train, k)
    train_counts = [base + (1 if c < extra else 0) for c in range(k)]

    feats, labs = [], []
    for c in range(k):
        feats.append(means[c] + rng.normal(0.0, 1.0, size=(train_counts[c], d)))
        labs.append(np.full(train_counts[c], c, dtype=np.int64))
    features = np.concatenate(feats)
    labels = np.concatenate(labs)
    order = rng.permutation(n_train)
    train = LabeledDataset(features[order], labels[order], k)

    feats, labs = [], []
    for c in range(k):
        feats.append(means[c] + rng.normal(0.0, 1.0, size=(spec.test_samples_per_class, d)))
        labs.append(np.full(spec.test_samples_per_class, c, dtype=np.int64))
    test = LabeledDataset(np.concatenate(feats), np.concatenate(labs), k)
    return train, test


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Round proportions*total to integers summing to total.

    Floor first, then hand the leftover units to the largest fractional
    parts; fractional ties break toward the lower index.
    """
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        frac = raw - counts
        order = np.lexsort((np.arange(len(frac)), -frac))
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(
    train: LabeledDataset, n_clients: int, mu: float, seed
) -> list[LabeledDataset]:
    """Split a train pool across clients with per-class Dirichlet(mu) shares.

    Small mu concentrates each class on few clients; large mu approaches
    an even split.  Every client ends up with at least one sample: after
    a bounded number of redraws, remaining empty shards are repaired by
    moving single samples from the largest shard (ties toward the lowest
    index).
    """
    if n_clients < 1:
        raise DataError(f"need at least one client, got {n_clients}")
    if not (mu > 0 and np.isfinite(mu)):
        raise DataError(f"dirichlet concentration must be positive, got {mu}")
    if train.n_samples < n_clients:
        raise DataError(
            f"cannot give {n_clients} clients at least one of "
            f"{train.n_samples} samples"
        )
    rng = np.random.default_rng(seed)

    assignment: list[list[int]] = []
    for _ in range(_MAX_PARTITION_ATTEMPTS):
        shards: list[list[int]] = [[] for _ in range(n_clients)]
        for c in range(train.n_classes):
            class_idx = np.flatnonzero(train.labels == c)
            if class_idx.size == 0:
                continue
            shares = rng.dirichlet(np.full(n_clients, mu))
            counts = _largest_remainder(shares, class_idx.size)
            stop = np.cumsum(counts)
            start = stop - counts
            for i in range(n_clients):
                shards[i].extend(class_idx[start[i] : stop[i]].tolist())
        if all(len(s) > 0 for s in shards):
            assignment = shards
            break
    else:
        assignment = shards  # last attempt, repaired below

    while any(len(s) == 0 for s in assignment):
        empty = min(i for i, s in enumerate(assignment) if len(s) == 0)
        sizes = [len(s) for s in assignment]
        donor = int(np.argmax(sizes))
        assignment[empty].append(assignment[donor].pop())

    return [train.subset(sorted(s)) for s in assignment]


def iid_partition(train: LabeledDataset, n_clients: int, seed) -> list[LabeledDataset]:
    """Shuffle once and deal samples round-robin; shard sizes differ by at
    most one."""
    if n_clients < 1:
        raise DataError(f"need at least one client, got {n_clients}")
    if train.n_samples < n_clients:
        raise DataError(
            f"cannot give {n_clients} clients at least one of "
            f"{train.n_samples} samples"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(train.n_samples)
    return [train.subset(sorted(order[i::n_clients].tolist())) for i in range(n_clients)]


def flip_labels(
    data: LabeledDataset, rate: float, seed, target: int | None = None
) -> LabeledDataset:
    """Corrupt a fraction of labels.

    Each sample flips independently with probability ``rate``.  Without a
    target, a flipped label is redrawn uniformly from the other classes;
    with one, flipped samples are relabelled to ``target`` (samples already
    carrying it are left alone).  rate=0 returns the data unchanged.
    """
    if not 0.0 <= rate <= 1.0:
        raise DataError(f"flip rate must be in [0, 1], got {rate}")
    if target is not None and not 0 <= target < data.n_classes:
        raise DataError(
            f"flip target {target} out of range for {data.n_classes} classes"
        )
    if rate == 0.0 or data.n_samples == 0:
        return data
    rng = np.random.default_rng(seed)
    flips = rng.random(data.n_samples) < rate
    labels = data.labels.copy()
    if target is None:
        # uniform over the k-1 wrong classes via a shifted draw
        offsets = rng.integers(1, data.n_classes, size=data.n_samples)
        labels[flips] = (labels[flips] + offsets[flips]) % data.n_classes
    else:
        labels[flips & (data.labels != target)] = target
    return LabeledDataset(data.features, labels, data.n_classes)
