"""Training objectives.

All losses are built from differentiable tensor ops so gradients reach the
generator through both networks where required. Temperature-scaled KL
softens both sides by tau and multiplies by tau^2, keeping gradient
magnitude temperature-stable; the teacher distribution is the reference
(first KL argument). Batch reduction is a mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .models import InputError
from .tensor import Tensor


@dataclass
class LossValue:
    value: Tensor
    components: dict[str, float] = field(default_factory=dict)

    @property
    def scalar(self) -> float:
        return float(self.value.data)


def classification_loss(teacher_logits: Tensor, labels: np.ndarray) -> LossValue:
    """Mean cross-entropy of the teacher's logits against sampled labels."""
    logits = teacher_logits
    n, c = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise InputError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise InputError(f"label out of range [0, {c})")
    onehot = np.zeros((n, c), dtype=logits.data.dtype)
    onehot[np.arange(n), labels] = 1.0
    logp = T.log_softmax(logits, axis=1)
    ce = T.scale(T.tsum(T.mul(logp, onehot)), -1.0 / n)
    return LossValue(ce, {"cls": float(ce.data)})


def _softened_kl(teacher_logits: Tensor, student_logits: Tensor, tau: float) -> Tensor:
    """tau^2 * mean_batch KL(softmax(t/tau) || softmax(s/tau))."""
    if teacher_logits.data.shape != student_logits.data.shape:
        raise InputError(f"logit shapes differ: {teacher_logits.data.shape} "
                         f"vs {student_logits.data.shape}")
    if tau < 1.0:
        raise InputError(f"temperature must be >= 1, got {tau}")
    n = teacher_logits.data.shape[0]
    lp_t = T.log_softmax(T.scale(teacher_logits, 1.0 / tau), axis=1)
    lp_s = T.log_softmax(T.scale(student_logits, 1.0 / tau), axis=1)
    p_t = T.texp(lp_t)
    per_row = T.tsum(T.mul(p_t, T.add(lp_t, T.scale(lp_s, -1.0))), axis=1)
    return T.scale(T.tsum(per_row), tau * tau / n)


def adversarial_generation_loss(teacher_logits: Tensor, student_logits: Tensor,
                                tau: float) -> LossValue:
    """Negated softened KL; minimizing it drives teacher/student apart."""
    kl = _softened_kl(teacher_logits, student_logits, tau)
    loss = T.scale(kl, -1.0)
    return LossValue(loss, {"adv": float(loss.data)})


def distillation_loss(teacher_logits: Tensor, student_logits: Tensor,
                      tau: float) -> LossValue:
    """Softened KL pulling the student toward the teacher on a batch."""
    kl = _softened_kl(teacher_logits, student_logits, tau)
    return LossValue(kl, {"kd": float(kl.data)})


def generator_loss(cls: LossValue, adv: LossValue, lam: float) -> LossValue:
    """Convex combination lam * cls + (1 - lam) * adv."""
    if not 0.0 < lam <= 1.0:
        raise InputError(f"loss weight must be in (0, 1], got {lam}")
    value = T.add(T.scale(cls.value, lam), T.scale(adv.value, 1.0 - lam))
    return LossValue(value, {"cls": cls.scalar, "adv": adv.scalar, "lambda": float(lam)})


def information_entropy(probs: np.ndarray) -> tuple[np.ndarray, float]:
    """Natural-log entropy per row and the batch mean; 0*log(0) is 0."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    if (p < 0).any():
        raise InputError("negative probability")
    sums = p.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-4):
        raise InputError(f"rows must sum to 1 within 1e-4, got {sums[np.argmax(np.abs(sums - 1))]}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    h = -terms.sum(axis=-1)
    return h, float(h.mean())
