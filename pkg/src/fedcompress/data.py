"""Synthetic datasets, non-IID client partitioning, and OOD noise generation.

Class blobs stand in for the real corpora at desk scale: isotropic Gaussian
clusters around centers sampled on a hypersphere. Partitioning controls two
knobs separately — client size spread (coefficient of variation of shard
sizes) and label skew (Dirichlet concentration). The server's distillation
set is uniform noise over the data's coordinate range: deliberately without
any statistical similarity to the client data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import PartitionError, ShapeError
from .nn import Batch


@dataclass
class Dataset:
    """Inputs with integer class labels and generation provenance."""

    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    seed: int

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ShapeError("inputs and labels must have equal length")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class PartitionSpec:
    """How a dataset is split across clients."""

    clients: int
    size_cv: float = 0.25  # coefficient of variation of shard sizes
    alpha: float = 1.0  # Dirichlet concentration for per-client label mix
    unlabeled_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.clients < 1:
            raise PartitionError(f"need at least one client, got {self.clients}")
        if self.size_cv < 0:
            raise PartitionError(f"size_cv must be non-negative, got {self.size_cv}")
        if self.alpha <= 0:
            raise PartitionError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.unlabeled_fraction < 1.0:
            raise PartitionError(
                f"unlabeled_fraction must lie in (0, 1), got {self.unlabeled_fraction}"
            )


@dataclass
class ClientState:
    """One client's local shards.

    ``eval_labels`` are the dropped labels of the unlabeled split, retained
    only so the simulator can report local validation accuracy; training and
    scoring never touch them.
    """

    client_id: int
    inputs_labeled: np.ndarray
    labels: np.ndarray
    inputs_unlabeled: np.ndarray
    eval_labels: np.ndarray
    seed: int

    @property
    def n_samples(self) -> int:
        return len(self.labels)


def make_blobs(
    n_classes: int, dim: int, n_samples: int, spread: float, seed: int, center_radius: float = 3.0
) -> Dataset:
    """Isotropic Gaussian class clusters with centers on a hypersphere.

    Class priors are uniform to within one sample. Deterministic in the seed.
    """
    if n_classes < 2:
        raise ShapeError(f"need at least two classes, got {n_classes}")
    if n_samples < n_classes:
        raise ShapeError(f"{n_samples} samples cannot cover {n_classes} classes")
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(n_classes, dim))
    centers = center_radius * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    counts = np.full(n_classes, n_samples // n_classes)
    counts[: n_samples % n_classes] += 1
    labels = np.repeat(np.arange(n_classes), counts)
    inputs = centers[labels] + spread * rng.normal(size=(n_samples, dim))
    order = rng.permutation(n_samples)
    return Dataset(inputs=inputs[order], labels=labels[order], n_classes=n_classes, seed=seed)


def train_test_split(ds: Dataset, test_count: int, seed: int):
    """Stratified split keeping every class represented on both sides."""
    if test_count < ds.n_classes or len(ds) - test_count < ds.n_classes:
        raise ShapeError(f"cannot carve {test_count} test samples out of {len(ds)} "
                         f"while keeping all {ds.n_classes} classes on both sides")
    rng = np.random.default_rng(seed)
    test_idx: List[np.ndarray] = []
    fractions = test_count / len(ds)
    taken = 0
    class_indices = [np.flatnonzero(ds.labels == c) for c in range(ds.n_classes)]
    for c, idx in enumerate(class_indices):
        remaining_classes = ds.n_classes - c - 1
        want = int(round(fractions * idx.size)) if remaining_classes else test_count - taken
        want = min(max(want, 1), idx.size - 1)
        test_idx.append(rng.permutation(idx)[:want])
        taken += want
    test_mask = np.zeros(len(ds), dtype=bool)
    test_mask[np.concatenate(test_idx)] = True
    train = Dataset(ds.inputs[~test_mask], ds.labels[~test_mask], ds.n_classes, ds.seed)
    test = Dataset(ds.inputs[test_mask], ds.labels[test_mask], ds.n_classes, ds.seed)
    return train, test


def _shard_sizes(n: int, spec: PartitionSpec, rng) -> np.ndarray:
    m = spec.clients
    if spec.size_cv == 0.0:
        sizes = np.full(m, n // m)
        sizes[: n % m] += 1
        return sizes
    # Gamma(1/cv^2) has unit mean and the requested coefficient of variation
    shape = 1.0 / spec.size_cv**2
    raw = rng.gamma(shape, 1.0 / shape, size=m)
    scaled = raw / raw.sum() * n
    sizes = np.floor(scaled).astype(int)
    remainder = n - sizes.sum()
    order = np.argsort(-(scaled - sizes))
    sizes[order[:remainder]] += 1
    # every client needs one labeled and one unlabeled sample
    while sizes.min() < 2:
        sizes[sizes.argmax()] -= 1
        sizes[sizes.argmin()] += 1
    return sizes


def _target_label_counts(size: int, mix: np.ndarray) -> np.ndarray:
    scaled = mix * size
    counts = np.floor(scaled).astype(int)
    shortfall = size - counts.sum()
    order = np.argsort(-(scaled - counts))
    counts[order[:shortfall]] += 1
    return counts


def partition(ds: Dataset, spec: PartitionSpec) -> List[ClientState]:
    """Split a dataset into disjoint, exhaustive client shards.

    Shard sizes follow the spec's coefficient of variation; each client's
    label mix is drawn from Dirichlet(alpha). Within each shard the
    unlabeled fraction is carved off with its labels dropped (kept aside
    for reporting only).
    """
    n = len(ds)
    if n < 2 * spec.clients:
        raise PartitionError(f"{n} samples cannot give {spec.clients} clients "
                             f"two samples each")
    rng = np.random.default_rng(spec.seed)
    sizes = _shard_sizes(n, spec, rng)
    mixes = rng.dirichlet(np.full(ds.n_classes, spec.alpha), size=spec.clients)

    pools = [list(rng.permutation(np.flatnonzero(ds.labels == c))) for c in range(ds.n_classes)]
    assigned: List[List[int]] = [[] for _ in range(spec.clients)]
    for k in range(spec.clients):
        want = _target_label_counts(int(sizes[k]), mixes[k])
        for c in range(ds.n_classes):
            take = min(want[c], len(pools[c]))
            for _ in range(take):
                assigned[k].append(pools[c].pop())
    leftovers = [i for pool in pools for i in pool]
    rng.shuffle(leftovers)
    for k in range(spec.clients):
        while len(assigned[k]) < sizes[k]:
            assigned[k].append(leftovers.pop())
    if leftovers:
        raise PartitionError(f"internal error: {len(leftovers)} samples left unassigned")

    clients = []
    for k in range(spec.clients):
        idx = np.array(assigned[k])
        idx = idx[rng.permutation(idx.size)]
        n_unlabeled = int(round(spec.unlabeled_fraction * idx.size))
        n_unlabeled = min(max(n_unlabeled, 1), idx.size - 1)
        u_idx, l_idx = idx[:n_unlabeled], idx[n_unlabeled:]
        clients.append(
            ClientState(
                client_id=k,
                inputs_labeled=ds.inputs[l_idx],
                labels=ds.labels[l_idx],
                inputs_unlabeled=ds.inputs[u_idx],
                eval_labels=ds.labels[u_idx],
                seed=k,
            )
        )
    return clients


def make_ood(dim: int, n_samples: int, seed: int, low: float = -4.0, high: float = 4.0) -> Batch:
    """Unlabeled uniform noise over a hypercube covering the data range."""
    if n_samples < 1:
        raise ShapeError(f"need at least one OOD sample, got {n_samples}")
    rng = np.random.default_rng(seed)
    return Batch(inputs=rng.uniform(low, high, size=(n_samples, dim)), labels=None)


def load_dataset_csv(path: str) -> Dataset:
    """Import an external dataset from a flat CSV matrix.

    Line one is the header ``n,dim,classes``; each following line holds
    ``dim`` feature values and a trailing integer label.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 3:
            raise ShapeError(f"{path}: header must be 'n,dim,classes', got {header}")
        n, dim, n_classes = (int(v) for v in header)
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.shape != (n, dim + 1):
        raise ShapeError(
            f"{path}: body shape {rows.shape} does not match header (n={n}, dim={dim})"
        )
    labels = rows[:, -1].astype(np.int64)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ShapeError(f"{path}: labels must lie in [0, {n_classes})")
    missing = set(range(n_classes)) - set(np.unique(labels).tolist())
    if missing:
        raise ShapeError(f"{path}: classes {sorted(missing)} have no samples")
    return Dataset(inputs=rows[:, :-1], labels=labels, n_classes=n_classes, seed=0)


def save_dataset_csv(path: str, ds: Dataset) -> None:
    """Write a dataset in the flat CSV interchange format above."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(ds)},{ds.inputs.shape[1]},{ds.n_classes}\n")
        for row, label in zip(ds.inputs, ds.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")
