"""Temperature-scaled softmax and KL-divergence distillation loss.

The loss is averaged over the batch (not summed), so the server learning
rate is batch-size independent. No labels are involved anywhere: the
teacher's output distribution is the only target.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from .errors import ShapeError
from .nn import softmax


def _validated_pair(teacher_logits, student_logits, temperature) -> Tuple[np.ndarray, np.ndarray]:
    if temperature <= 0.0:
        raise ShapeError(f"temperature must be positive, got {temperature}")
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 2:
        raise ShapeError(f"teacher/student logits must be matching 2-D matrices, got {t.shape} vs {s.shape}")
    if not (np.isfinite(t).all() and np.isfinite(s).all()):
        raise ShapeError("logits contain non-finite entries")
    return t, s


def temp_softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax of logits / temperature."""
    if temperature <= 0.0:
        raise ShapeError(f"temperature must be positive, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ShapeError("logits contain non-finite entries")
    return softmax(logits / temperature)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def kld_loss(teacher_logits, student_logits, temperature: float) -> float:
    """Squared-temperature-weighted mean KL(teacher || student) at temperature.

    Returns temperature^2 times the per-sample mean KL divergence between
    the temperature-scaled output distributions. Non-negative, and zero
    exactly when the scaled distributions coincide.
    """
    t, s = _validated_pair(teacher_logits, student_logits, temperature)
    log_p = _log_softmax(t / temperature)
    log_q = _log_softmax(s / temperature)
    kl_rows = (np.exp(log_p) * (log_p - log_q)).sum(axis=1)
    return float(temperature**2 * kl_rows.mean())


def kld_grad_student(teacher_logits, student_logits, temperature: float) -> np.ndarray:
    """Gradient of :func:`kld_loss` with respect to the student logits.

    Per row: temperature * (softmax(s/T) - softmax(t/T)) / n, the squared
    temperature prefactor and the 1/T chain rule combined. Rows sum to zero.
    """
    t, s = _validated_pair(teacher_logits, student_logits, temperature)
    p = softmax(t / temperature)
    q = softmax(s / temperature)
    return temperature * (q - p) / t.shape[0]
