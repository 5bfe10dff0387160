"""Effective-rank representation-quality score of embedding matrices.

The score is exp(entropy) of the L1-normalized singular-value spectrum of
the penultimate-layer embeddings: it ranges from 1 (rank-one collapse) to
min(n, h) (perfectly isotropic spectrum) and needs no labels. Singular
values come from a cyclic Jacobi eigendecomposition of the smaller Gram
matrix; embedding widths are small at this scale, so a dense sweep solver
is plenty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DegenerateEmbeddingError, ShapeError
from .nn import Batch, ModelWeights, penultimate_embeddings

STABILITY_EPS = 1e-7


@dataclass
class ScoreReport:
    """Spectrum, normalized ratios, and the resulting score."""

    singular_values: np.ndarray  # non-increasing, non-negative
    ratios: np.ndarray
    score: float


def jacobi_eigvals(matrix: np.ndarray, tol: float = 1e-10, max_sweeps: int = 50) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps all off-diagonal pairs until their Frobenius mass falls below
    tol times the matrix norm. Returns eigenvalues in ascending order.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 1:
        return a.ravel().copy()
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * (np.triu(a, 1) ** 2).sum())
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0.0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
    return np.sort(np.diag(a).copy())


def singular_values(embeddings: np.ndarray) -> np.ndarray:
    """Singular values of an embedding matrix, sorted descending.

    Computed as square roots of the eigenvalues of the smaller Gram matrix,
    which is exact to about 1e-8 times the matrix norm.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
        raise ShapeError(f"embeddings must be a non-empty 2-D matrix, got shape {z.shape}")
    if not np.isfinite(z).all():
        raise ShapeError("embeddings contain non-finite entries")
    gram = z.T @ z if z.shape[1] <= z.shape[0] else z @ z.T
    eigvals = jacobi_eigvals(gram)
    return np.sqrt(np.clip(eigvals, 0.0, None))[::-1]


def effective_rank_score(sigma: np.ndarray) -> float:
    """exp of the entropy of the L1-normalized singular values.

    Each ratio gets a small stability constant (1e-7) after normalization
    so zero singular values contribute finite log terms.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or sigma.min() < -1e-12:
        raise ShapeError("singular values must be a non-empty, non-negative vector")
    total = sigma.sum()
    if total <= 0.0:
        raise DegenerateEmbeddingError("all singular values are zero")
    ratios = sigma / total + STABILITY_EPS
    return float(np.exp(-(ratios * np.log(ratios)).sum()))


def score_report(embeddings: np.ndarray) -> ScoreReport:
    sigma = singular_values(embeddings)
    total = sigma.sum()
    if total <= 0.0:
        raise DegenerateEmbeddingError("all singular values are zero")
    ratios = sigma / total + STABILITY_EPS
    return ScoreReport(singular_values=sigma, ratios=ratios, score=effective_rank_score(sigma))


def client_score(model: ModelWeights, unlabeled: Union[Batch, np.ndarray]) -> float:
    """Score of the model's penultimate embeddings over an unlabeled set.

    The whole set is processed as one batch: the spectrum is a property of
    the full embedding matrix.
    """
    return effective_rank_score(singular_values(penultimate_embeddings(model, unlabeled)))
