"""Weight-codebook machinery.

Each weight matrix gets its own small codebook of centroid values, all
layers sharing one cluster count. Biases never participate: they are a
negligible parameter fraction and travel uncompressed. The clustering
penalty is the summed squared distance of every weight to its nearest
centroid, with hard assignments recomputed at every evaluation (the
assignment is piecewise constant, so no gradient flows through it).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .codec import ClusteredModel
from .errors import ShapeError
from .nn import ModelGrads, ModelWeights


@dataclass
class Codebook:
    """Per-layer centroid vectors sharing a single cluster count."""

    centroids: List[np.ndarray]

    def __post_init__(self):
        if not self.centroids:
            raise ShapeError("codebook needs at least one layer")
        counts = {c.size for c in self.centroids}
        if len(counts) != 1:
            raise ShapeError(f"layers must share one cluster count, got {sorted(counts)}")
        for i, c in enumerate(self.centroids):
            if c.size < 1 or not np.isfinite(c).all():
                raise ShapeError(f"layer {i} centroids must be finite and non-empty")

    @property
    def cluster_count(self) -> int:
        return self.centroids[0].size

    def copy(self) -> "Codebook":
        return Codebook([c.copy() for c in self.centroids])


def _pad_distinct(distinct: np.ndarray, k: int) -> np.ndarray:
    """Pad too few distinct values with evenly spaced points over [min, max]."""
    lo, hi = float(distinct.min()), float(distinct.max())
    need = k - distinct.size
    if hi > lo:
        fill = np.linspace(lo, hi, need + 2)[1:-1]
    else:
        # degenerate single-value layer: spread by tiny offsets to keep centroids distinct
        eps = 1e-8 * max(1.0, abs(lo))
        fill = lo + eps * np.arange(1, need + 1)
    out = np.sort(np.concatenate([distinct, fill]))
    # nudge any duplicates the padding may have landed on
    for i in range(1, out.size):
        if out[i] <= out[i - 1]:
            out[i] = np.nextafter(out[i - 1], np.inf)
    return out


def init_centroids(values: np.ndarray, cluster_count: int, rng) -> np.ndarray:
    """K-means centroids of a layer's weight values, sorted ascending.

    Lloyd's algorithm with k-means++ seeding, at most 50 iterations,
    movement tolerance 1e-6. If the layer has fewer distinct values than
    requested clusters, those values are returned padded with evenly
    spaced points over [min, max].
    """
    if cluster_count < 1:
        raise ShapeError(f"cluster count must be >= 1, got {cluster_count}")
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ShapeError("cannot cluster an empty layer")
    distinct = np.unique(values)
    if distinct.size <= cluster_count:
        if distinct.size == cluster_count:
            return distinct.copy()
        return _pad_distinct(distinct, cluster_count)
    centers = _kmeans_pp_seed(values, cluster_count, rng)
    for _ in range(50):
        labels = assign(values, centers)
        moved = 0.0
        for j in range(cluster_count):
            members = values[labels == j]
            if members.size:
                new_c = members.mean()
                moved = max(moved, abs(new_c - centers[j]))
                centers[j] = new_c
        if moved < 1e-6:
            break
    return np.sort(centers)


def _kmeans_pp_seed(values: np.ndarray, k: int, rng) -> np.ndarray:
    centers = np.empty(k)
    centers[0] = values[rng.integers(values.size)]
    d2 = (values - centers[0]) ** 2
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # remaining mass sits on chosen centers; fall back to unused distinct values
            unused = np.setdiff1d(np.unique(values), centers[:j])
            centers[j:] = unused[: k - j]
            break
        centers[j] = values[rng.choice(values.size, p=d2 / total)]
        d2 = np.minimum(d2, (values - centers[j]) ** 2)
    return centers


def codebook_for_model(model: ModelWeights, cluster_count: int, rng) -> Codebook:
    """K-means codebook over each weight matrix of the model."""
    return Codebook([init_centroids(w, cluster_count, rng) for w in model.weights])


def assign(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid index per value; ties break to the lowest index."""
    if centroids.size == 0:
        raise ShapeError("cannot assign against an empty centroid list")
    flat = np.asarray(values, dtype=np.float64).ravel()
    d2 = (flat[:, None] - centroids[None, :]) ** 2
    return d2.argmin(axis=1)


def assignments_for_model(model: ModelWeights, codebook: Codebook) -> List[np.ndarray]:
    _check_structure(model, codebook)
    return [assign(w, c) for w, c in zip(model.weights, codebook.centroids)]


def _check_structure(model: ModelWeights, codebook: Codebook) -> None:
    if len(codebook.centroids) != model.n_layers:
        raise ShapeError(
            f"codebook has {len(codebook.centroids)} layers, model has {model.n_layers}"
        )


def _wc_terms(
    model: ModelWeights, codebook: Codebook
) -> Tuple[float, ModelGrads, List[np.ndarray], List[np.ndarray]]:
    """Loss, weight grads, centroid grads, and cluster populations."""
    _check_structure(model, codebook)
    loss = 0.0
    grads_w, grads_mu, counts = [], [], []
    for w, centroids in zip(model.weights, codebook.centroids):
        flat = w.ravel()
        labels = assign(flat, centroids)
        diff = flat - centroids[labels]
        loss += float(diff @ diff)
        grads_w.append((2.0 * diff).reshape(w.shape))
        grads_mu.append(-2.0 * np.bincount(labels, weights=diff, minlength=centroids.size))
        counts.append(np.bincount(labels, minlength=centroids.size))
    grads_b = [np.zeros_like(b) for b in model.biases]
    return loss, ModelGrads(grads_w, grads_b), grads_mu, counts


def wc_loss_and_grads(
    model: ModelWeights, codebook: Codebook
) -> Tuple[float, ModelGrads, List[np.ndarray]]:
    """Clustering penalty with gradients for both weights and centroids.

    loss      = sum over weights of (w - mu_a(w))^2, assignments recomputed
    d/dw      = 2 (w - mu_a(w))
    d/dmu_j   = -2 sum over weights assigned to j of (w - mu_j)

    Bias gradients are zero (biases are not clustered).
    """
    loss, grads, grads_mu, _ = _wc_terms(model, codebook)
    return loss, grads, grads_mu


def centroid_step(codebook: Codebook, grads_mu, counts, lr: float) -> Codebook:
    """Descend centroids with the step normalized by cluster population.

    The raw centroid gradient sums over every weight assigned to the
    cluster, so its curvature grows with the population; an unnormalized
    step diverges for any practical learning rate. Dividing by the
    population moves each centroid toward its cluster mean at rate 2*lr,
    matching the rate at which weights move toward centroids.
    """
    return Codebook([
        mu - lr * g / np.maximum(n, 1)
        for mu, g, n in zip(codebook.centroids, grads_mu, counts)
    ])


def wc_loss(model: ModelWeights, codebook: Codebook) -> float:
    """Clustering penalty alone."""
    return wc_loss_and_grads(model, codebook)[0]


def wc_loss_fixed_assignments(
    model: ModelWeights, codebook: Codebook, assignments: List[np.ndarray]
) -> float:
    """Clustering penalty with assignments frozen (the convex restriction)."""
    _check_structure(model, codebook)
    loss = 0.0
    for w, centroids, labels in zip(model.weights, codebook.centroids, assignments):
        diff = w.ravel() - centroids[labels]
        loss += float(diff @ diff)
    return loss


def grow_centroids(centroids: np.ndarray, new_count: int) -> np.ndarray:
    """Extend a centroid list by inserting midpoints of the largest gaps.

    Existing centroids are preserved; used when the cluster count rises
    while a trained codebook should be kept.
    """
    centroids = np.sort(np.asarray(centroids, dtype=np.float64))
    if new_count < centroids.size:
        raise ShapeError(f"cannot grow {centroids.size} centroids down to {new_count}")
    out = centroids
    while out.size < new_count:
        if out.size == 1:
            out = np.sort(np.append(out, out[0] + max(1.0, abs(out[0])) * 1e-3))
            continue
        gaps = np.diff(out)
        widest = int(gaps.argmax())
        midpoint = 0.5 * (out[widest] + out[widest + 1])
        out = np.sort(np.insert(out, widest + 1, midpoint))
    return out


def snap(model: ModelWeights, codebook: Codebook) -> ClusteredModel:
    """Hard-quantize every weight to its nearest centroid (wire precision).

    Centroids are rounded to float32 first, then assignment runs against the
    rounded values, so the stored indices are exactly nearest-of-stored and
    the operation is idempotent.
    """
    _check_structure(model, codebook)
    codebooks32, indices = [], []
    for w, centroids in zip(model.weights, codebook.centroids):
        cb32 = centroids.astype(np.float32)
        labels = assign(w, cb32.astype(np.float64))
        codebooks32.append(cb32)
        indices.append(labels.astype(np.uint32))
    biases32 = [b.astype(np.float32) for b in model.biases]
    return ClusteredModel(codebooks32, indices, biases32, model.dims, model.activation)
