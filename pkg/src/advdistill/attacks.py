"""Gradient-based adversarial example crafting.

FGSM is the single-step sign attack; PGD iterates sign ascent with per-step
projection onto the epsilon-ball and the [0, 1] box. The inner objective is
pluggable:

* ``cross_entropy``   - ascent on CE against true labels (PGD_S, FGSM)
* ``kl_vs_clean``     - ascent on KL(model(x') || model(x)) (PGD_T)
* ``cw_margin``       - ascent on max_{j!=y} z_j - z_y (CW-infinity style)
* ``kd_vs_teacher``   - ascent on KL(teacher(x) || student(x')), the
  distillation training attack

Attacks are read-only on the model: parameter gradients are disabled while
crafting and batch norm uses running statistics.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .layers import Network
from .models import InputError, softmax_with_temperature
from .tensor import NumericalError, Tensor

LOSS_KINDS = ("cross_entropy", "kl_vs_clean", "cw_margin", "kd_vs_teacher")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    steps: int = 10
    random_start_radius: float = 0.001
    loss_kind: str = "cross_entropy"

    def __post_init__(self):
        if self.steps < 1:
            raise InputError(f"steps must be >= 1, got {self.steps}")
        if self.epsilon < 0:
            raise InputError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0 <= self.step_size <= self.epsilon:
            raise InputError(f"step_size must lie in [0, epsilon], got {self.step_size}")
        if self.random_start_radius < 0:
            raise InputError("random_start_radius must be >= 0")
        if self.loss_kind not in LOSS_KINDS:
            raise InputError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "step_size": self.step_size, "steps": self.steps,
                "random_start_radius": self.random_start_radius, "loss_kind": self.loss_kind}

    @staticmethod
    def from_dict(d: dict) -> "AttackConfig":
        return AttackConfig(**d)


@contextlib.contextmanager
def _param_grads_disabled(model: Network):
    flags = [(p, p.requires_grad) for p in model.parameters()]
    for p, _ in flags:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in flags:
            p.requires_grad = f


def _inner_loss(logits: Tensor, kind: str, labels: np.ndarray | None,
                reference_probs: np.ndarray | None) -> Tensor:
    n, c = logits.data.shape
    if kind == "cross_entropy":
        onehot = np.zeros((n, c), dtype=logits.data.dtype)
        onehot[np.arange(n), labels] = 1.0
        logp = T.log_softmax(logits, axis=1)
        return T.scale(T.tsum(T.mul(logp, onehot)), -1.0 / n)
    if kind == "kl_vs_clean":
        # KL(p(x') || p_clean): the adversarial side is the differentiable one
        log_ref = np.log(np.clip(reference_probs, 1e-38, None)).astype(logits.data.dtype)
        lp = T.log_softmax(logits, axis=1)
        p = T.texp(lp)
        per_row = T.tsum(T.mul(p, T.add(lp, Tensor(-log_ref))), axis=1)
        return T.scale(T.tsum(per_row), 1.0 / n)
    if kind == "cw_margin":
        rows = np.arange(n)
        masked = logits.data.copy()
        masked[rows, labels] = -np.inf
        runner_up = np.argmax(masked, axis=1)
        margin = T.add(T.take_per_row(logits, runner_up),
                       T.scale(T.take_per_row(logits, labels), -1.0))
        return T.scale(T.tsum(margin), 1.0 / n)
    if kind == "kd_vs_teacher":
        # KL(p_ref || p(x')): only the student log-probs carry gradient
        p_ref = reference_probs.astype(logits.data.dtype)
        log_ref = np.log(np.clip(p_ref, 1e-38, None))
        lp = T.log_softmax(logits, axis=1)
        per_row = T.tsum(T.mul(Tensor(p_ref), T.add(Tensor(log_ref), T.scale(lp, -1.0))), axis=1)
        return T.scale(T.tsum(per_row), 1.0 / n)
    raise InputError(f"unknown loss kind {kind!r}")


def input_gradient(model: Network, x: np.ndarray, kind: str,
                   labels: np.ndarray | None = None,
                   reference_probs: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the inner attack loss with respect to the input batch."""
    xt = Tensor(np.ascontiguousarray(x), requires_grad=True)
    with _param_grads_disabled(model):
        logits = model.forward(xt, training=False)
        loss = _inner_loss(logits, kind, labels, reference_probs)
        loss.backward()
    g = xt.grad
    if g is None or not np.isfinite(g).all():
        raise NumericalError("non-finite attack gradient")
    return g


def fgsm(model: Network, x: np.ndarray, labels: np.ndarray, epsilon: float) -> np.ndarray:
    """One sign step of size epsilon on the cross-entropy loss."""
    x = np.asarray(x)
    g = input_gradient(model, x, "cross_entropy", labels=labels)
    eps = x.dtype.type(epsilon)
    return np.clip(x + eps * np.sign(g), x.dtype.type(0), x.dtype.type(1))


def pgd(model: Network, x: np.ndarray, config: AttackConfig,
        rng: np.random.Generator | None = None,
        labels: np.ndarray | None = None,
        reference_probs: np.ndarray | None = None) -> np.ndarray:
    """Iterated sign ascent with per-step ball and box projection."""
    x = np.asarray(x)
    kind = config.loss_kind
    if kind in ("cross_entropy", "cw_margin") and labels is None:
        raise InputError(f"loss kind {kind!r} needs labels")
    if kind == "kd_vs_teacher" and reference_probs is None:
        raise InputError("loss kind 'kd_vs_teacher' needs teacher reference probabilities")
    if kind == "kl_vs_clean" and reference_probs is None:
        with T.no_grad():
            reference_probs = softmax_with_temperature(model.forward(x, training=False), 1.0)

    eps = x.dtype.type(config.epsilon)
    step = x.dtype.type(config.step_size)
    lo = np.maximum(x - eps, x.dtype.type(0))
    hi = np.minimum(x + eps, x.dtype.type(1))

    x_adv = x
    if config.random_start_radius > 0:
        if rng is None:
            raise InputError("a random start needs an rng")
        r = config.random_start_radius
        x_adv = np.clip(x + rng.uniform(-r, r, size=x.shape).astype(x.dtype), lo, hi)
    for _ in range(config.steps):
        g = input_gradient(model, x_adv, kind, labels=labels, reference_probs=reference_probs)
        x_adv = np.clip(x_adv + step * np.sign(g), lo, hi)
    return x_adv


def craft_training_adversarial(student: Network, teacher: Network, images: np.ndarray,
                               config: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    """Training attack: ascend the student's KL against the teacher's soft
    prediction on the clean batch (temperature 1)."""
    cfg = replace(config, loss_kind="kd_vs_teacher")
    with T.no_grad():
        teacher_probs = softmax_with_temperature(teacher.forward(images, training=False), 1.0)
    return pgd(student, images, cfg, rng=rng, reference_probs=teacher_probs)
