"""Adaptive hyperparameter rules driven by per-batch confidence statistics.

Two scalars are recomputed each mini-batch from temperature-1 softmax
confidences on clean synthetic samples:

* the interactive temperature, the batch-mean absolute teacher-student
  confidence gap scaled by the class count and floored at 1, and
* the generator balance weight, the reciprocal of the class count times the
  batch-mean teacher confidence, which always lands in (0, 1].

Statistics are computed in float64 so the uniform-teacher endpoint of the
balance weight is exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import InputError, softmax_with_temperature
from .tensor import Tensor


@dataclass
class ConfidenceStats:
    teacher_confidence: np.ndarray  # (batch,) max teacher probability
    student_confidence: np.ndarray  # (batch,) student probability at the teacher argmax
    teacher_class: np.ndarray       # (batch,) teacher argmax, ties to lowest index
    num_classes: int

    def __post_init__(self):
        if self.teacher_confidence.size == 0:
            raise InputError("empty batch")
        for arr in (self.teacher_confidence, self.student_confidence):
            if arr.min() < 0 or arr.max() > 1:
                raise InputError("confidences must lie in [0, 1]")
        if self.teacher_class.min() < 0 or self.teacher_class.max() >= self.num_classes:
            raise InputError("teacher class index out of range")

    @property
    def batch_size(self) -> int:
        return self.teacher_confidence.shape[0]


@dataclass
class AdaptiveState:
    tau: float
    lam: float
    stats: ConfidenceStats
    epoch: int = 0
    batch: int = 0


def _as_array(logits) -> np.ndarray:
    return logits.data if isinstance(logits, Tensor) else np.asarray(logits)


def confidence_stats(teacher_logits, student_logits) -> ConfidenceStats:
    """Temperature-1 confidences of both models on the same batch."""
    t = _as_array(teacher_logits).astype(np.float64)
    s = _as_array(student_logits).astype(np.float64)
    if t.shape != s.shape or t.ndim != 2:
        raise InputError(f"logit shapes must match and be 2-d: {t.shape} vs {s.shape}")
    p_t = softmax_with_temperature(t, 1.0)
    p_s = softmax_with_temperature(s, 1.0)
    cls = np.argmax(p_t, axis=1)  # np.argmax breaks ties toward the lowest index
    rows = np.arange(t.shape[0])
    return ConfidenceStats(p_t[rows, cls], p_s[rows, cls], cls, t.shape[1])


def interactive_temperature(stats: ConfidenceStats, num_classes: int | None = None) -> float:
    """Batch-mean |teacher - student| confidence gap times C, floored at 1."""
    c = stats.num_classes if num_classes is None else num_classes
    gap = np.abs(stats.teacher_confidence - stats.student_confidence).mean()
    tau = max(float(gap * c), 1.0)
    assert tau <= c, f"temperature {tau} exceeds class count {c}"
    return tau


def adaptive_lambda(stats: ConfidenceStats, num_classes: int | None = None) -> float:
    """Reciprocal of C times the mean teacher confidence, in (0, 1]."""
    c = stats.num_classes if num_classes is None else num_classes
    mean_conf = float(stats.teacher_confidence.mean())
    # mean confidence >= 1/C up to round-off; the branch makes the uniform
    # endpoint exact and doubles as the clamp
    if mean_conf <= 1.0 / c:
        return 1.0
    return 1.0 / (c * mean_conf)
