"""Comparison experiments: temperature strategies and mode ablations.

The temperature-strategy experiment trains one student per arm under the
same teacher and budget: a step-increase schedule, a fixed constant, a
step-decrease schedule, and the interactive rule. Fixed-schedule arms and
the interactive arm all use the fixed vanilla loss weight, so the arms
differ only in how the distillation temperature evolves. Schedule
inflections sit at 30% and 70% of the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import ImageDataset
from .models import ConvClassifier
from .training import DistillationTrainer, TrainConfig, attack_accuracy

STRATEGY_ARMS = ("step_increase", "constant", "step_decrease", "ita")


def strategy_schedule(name: str, low: float = 1.0, mid: float = 3.0,
                      high: float = 5.0) -> tuple[tuple[float, float], ...] | None:
    if name == "step_increase":
        return ((0.0, low), (0.3, mid), (0.7, high))
    if name == "constant":
        return ((0.0, mid),)
    if name == "step_decrease":
        return ((0.0, high), (0.3, mid), (0.7, low))
    if name == "ita":
        return None
    raise ValueError(f"unknown strategy {name!r}")


@dataclass
class StrategyResult:
    strategy: str
    seed: int
    best_accuracy: float
    best_epoch: int
    tau_by_epoch: dict[int, float]


@dataclass
class StrategyComparison:
    results: list[StrategyResult] = field(default_factory=list)

    def best_by_strategy(self) -> dict[str, float]:
        out: dict[str, list[float]] = {}
        for r in self.results:
            out.setdefault(r.strategy, []).append(r.best_accuracy)
        return {k: float(np.mean(v)) for k, v in out.items()}

    def wins(self, a: str, b: str) -> int:
        """Seeds where strategy a's best accuracy >= strategy b's."""
        by_seed_a = {r.seed: r.best_accuracy for r in self.results if r.strategy == a}
        by_seed_b = {r.seed: r.best_accuracy for r in self.results if r.strategy == b}
        return sum(1 for s in by_seed_a if by_seed_a[s] >= by_seed_b.get(s, np.inf))

    def table(self) -> str:
        lines = [f"{'strategy':>14} | {'seed':>4} | {'best robust acc':>15}"]
        for r in sorted(self.results, key=lambda r: (r.strategy, r.seed)):
            lines.append(f"{r.strategy:>14} | {r.seed:>4} | {r.best_accuracy:15.2f}")
        means = self.best_by_strategy()
        lines.append("-" * len(lines[0]))
        for k in sorted(means):
            lines.append(f"{k:>14} | mean | {means[k]:15.2f}")
        return "\n".join(lines)


def temperature_strategy_experiment(base: TrainConfig, teacher: ConvClassifier,
                                    eval_set: ImageDataset,
                                    seeds: tuple[int, ...] = (0, 1, 2),
                                    arms: tuple[str, ...] = STRATEGY_ARMS) -> StrategyComparison:
    comparison = StrategyComparison()
    for arm in arms:
        schedule = strategy_schedule(arm)
        for seed in seeds:
            if arm == "ita":
                cfg = replace(base, mode="ita", tau_schedule=None, seed=seed)
            else:
                cfg = replace(base, mode="scheduled", tau_schedule=schedule, seed=seed)
            trainer = DistillationTrainer(cfg, teacher, eval_set)
            report = trainer.run()
            comparison.results.append(StrategyResult(
                arm, seed, report.best_accuracy, report.best_epoch, report.tau_by_epoch()))
    return comparison


@dataclass
class AblationResult:
    mode: str
    seed: int
    robust_accuracy: float


def mode_ablation(base: TrainConfig, teacher: ConvClassifier, eval_set: ImageDataset,
                  modes: tuple[str, ...] = ("adaptive", "vanilla"),
                  seeds: tuple[int, ...] = (0, 1, 2)) -> list[AblationResult]:
    """Best-checkpoint robust accuracy per mode and seed on the same task."""
    out = []
    for mode in modes:
        for seed in seeds:
            cfg = replace(base, mode=mode, seed=seed)
            trainer = DistillationTrainer(cfg, teacher, eval_set)
            report = trainer.run()
            out.append(AblationResult(mode, seed, report.best_accuracy))
    return out
