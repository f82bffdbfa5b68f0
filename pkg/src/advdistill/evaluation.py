"""Robustness evaluation harness and entropy diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, fgsm, pgd
from .data import ImageDataset
from .losses import information_entropy
from .models import ConditionalGenerator, ConvClassifier, InputError, softmax_with_temperature

ROBUST_ATTACKS = ("fgsm", "pgd_s", "pgd_t", "cw")


@dataclass(frozen=True)
class AttackSuite:
    """Evaluation protocol: one-step FGSM plus three 20-step PGD variants,
    all at the same radius, PGD starts uniform in the full ball."""
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    steps: int = 20

    def pgd_config(self, loss_kind: str) -> AttackConfig:
        return AttackConfig(epsilon=self.epsilon, step_size=min(self.step_size, self.epsilon),
                            steps=self.steps, random_start_radius=self.epsilon,
                            loss_kind=loss_kind)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "step_size": self.step_size, "steps": self.steps}


@dataclass
class RobustnessReport:
    accuracies: dict[str, float]  # percent, keys: clean + ROBUST_ATTACKS
    average: float                # mean over the four robust attacks only
    model_id: str
    attack_configs: dict
    seed: int

    def __post_init__(self):
        expected = float(np.mean([self.accuracies[a] for a in ROBUST_ATTACKS]))
        if abs(expected - self.average) > 1e-6:
            raise InputError(f"average {self.average} != mean of robust attacks {expected}")

    def to_json(self) -> str:
        return json.dumps({"model_id": self.model_id, "seed": self.seed,
                           "accuracies": self.accuracies, "average": self.average,
                           "attack_configs": self.attack_configs},
                          indent=2, sort_keys=True)

    def table(self) -> str:
        cols = ["clean"] + list(ROBUST_ATTACKS) + ["average"]
        vals = [self.accuracies["clean"]] + \
               [self.accuracies[a] for a in ROBUST_ATTACKS] + [self.average]
        head = " | ".join(f"{c:>7}" for c in cols)
        row = " | ".join(f"{v:7.2f}" for v in vals)
        return f"{self.model_id}\n{head}\n{'-' * len(head)}\n{row}"


def _batched_accuracy(model, images, labels, batch_size, attacked=None) -> float:
    correct = 0
    for start in range(0, len(labels), batch_size):
        x = images[start:start + batch_size]
        y = labels[start:start + batch_size]
        if attacked is not None:
            x = attacked(x, y)
        with T.no_grad():
            logits = model.forward(x, training=False)
        correct += int((np.argmax(logits.data, axis=1) == y).sum())
    return 100.0 * correct / len(labels)


def evaluate_robustness(model: ConvClassifier, test_set: ImageDataset,
                        suite: AttackSuite | None = None, seed: int = 0,
                        batch_size: int = 256, model_id: str = "model") -> RobustnessReport:
    """Accuracy under the full attack suite; deterministic for a seed."""
    if len(test_set) == 0:
        raise InputError("empty test set")
    suite = suite or AttackSuite()
    images, labels = test_set.images, test_set.labels

    def rng_for(tag: int):
        return np.random.default_rng(np.random.SeedSequence([seed, 0xA77C, tag]))

    acc = {"clean": _batched_accuracy(model, images, labels, batch_size)}
    acc["fgsm"] = _batched_accuracy(
        model, images, labels, batch_size,
        lambda x, y: fgsm(model, x, y, suite.epsilon))
    variants = {"pgd_s": ("cross_entropy", 1), "pgd_t": ("kl_vs_clean", 2),
                "cw": ("cw_margin", 3)}
    for name, (kind, tag) in variants.items():
        cfg = suite.pgd_config(kind)
        rng = rng_for(tag)
        acc[name] = _batched_accuracy(
            model, images, labels, batch_size,
            lambda x, y, cfg=cfg, rng=rng: pgd(model, x, cfg, rng=rng, labels=y))
    average = float(np.mean([acc[a] for a in ROBUST_ATTACKS]))
    return RobustnessReport(acc, average, model_id,
                            {"suite": suite.to_dict()}, seed)


def entropy_report(teacher: ConvClassifier, generator: ConditionalGenerator,
                   n_batches: int, batch_size: int = 256, seed: int = 0) -> list[float]:
    """Mean teacher-prediction entropy on freshly generated batches."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE27]))
    out = []
    for _ in range(n_batches):
        z = rng.standard_normal((batch_size, generator.latent_dim), dtype=np.float32)
        y = rng.integers(0, generator.num_classes, size=batch_size)
        with T.no_grad():
            images = generator(z, y)
            logits = teacher.forward(images.data, training=False)
        _, mean_h = information_entropy(softmax_with_temperature(logits.data, 1.0))
        out.append(mean_h)
    return out
