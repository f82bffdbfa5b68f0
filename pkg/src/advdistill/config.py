"""Declarative experiment configuration.

One JSON document drives every subcommand. Unknown keys are rejected with
their path; `--set a.b.c=value` overrides individual leaves (values parse
as JSON literals, falling back to strings). The config hash is the sha256
of the canonical JSON dump of the fully resolved document and is embedded
in every artifact a run produces.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .attacks import AttackConfig
from .data import SyntheticSpec
from .evaluation import AttackSuite
from .training import PretrainConfig, TrainConfig


class ConfigError(ValueError):
    pass


_ATTACK_DEFAULTS = {
    "epsilon": 8 / 255, "step_size": 2 / 255, "steps": 10,
    "random_start_radius": 0.001, "loss_kind": "cross_entropy",
}

DEFAULTS: dict = {
    "seed": 0,
    "output_dir": "runs/out",
    "dataset": {
        "kind": "synthetic",        # synthetic | raw | png_dir
        "train_path": "",
        "test_path": "",
        "num_classes": 10,
        "train_per_class": 200,
        "test_per_class": 60,
        "image_size": 32,
        "channels": 3,
        "amplitude": 0.15,
        "noise": 0.12,
        "seed": 0,
    },
    "teacher": {
        "widths": [16, 32, 64],
        "stem_stride": 1,
        "checkpoint": "",
    },
    "pretrain": {
        "epochs": 20,
        "batch_size": 128,
        "lr": 0.05,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "eval_steps": 20,
        "attack": dict(_ATTACK_DEFAULTS),
    },
    "train": {
        "epochs": 200,
        "generator_iters": 1,
        "student_iters": 5,
        "batch_size": 256,
        "student_widths": [8, 16, 32],
        "student_stem_stride": 1,
        "student_lr": 0.05,
        "student_momentum": 0.9,
        "student_weight_decay": 1e-4,
        "generator_latent": 1024,
        "generator_channels": 256,
        "generator_lr": 1e-3,
        "generator_beta1": 0.5,
        "generator_beta2": 0.999,
        "mode": "adaptive",         # adaptive | vanilla | ita-gen-only
        "vanilla_tau": 3.0,
        "vanilla_lambda": 0.3,
        "label_sampling": "uniform",
        "eval_every": 5,
        "eval_batch_size": 256,
        "checkpoint_every": 1,
        "attack": {**_ATTACK_DEFAULTS, "loss_kind": "kd_vs_teacher"},
        "selection_attack": {**_ATTACK_DEFAULTS, "steps": 20,
                             "random_start_radius": 8 / 255, "loss_kind": "kl_vs_clean"},
    },
    "evaluate": {
        "epsilon": 8 / 255,
        "step_size": 2 / 255,
        "steps": 20,
        "batch_size": 256,
        "checkpoint": "",
    },
    "entropy": {
        "n_batches": 10,
        "batch_size": 256,
        "teacher_checkpoint": "",
        "generator_checkpoint": "",
    },
    "temp_experiment": {
        "seeds": [0, 1, 2],
        "tau_low": 1.0,
        "tau_mid": 3.0,
        "tau_high": 5.0,
    },
}


def _validate(user: dict, defaults: dict, path: str = "") -> None:
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key '{here}'")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{here}' must be a section (object), got {type(value).__name__}")
            _validate(value, defaults[key], here)


def _merge(user: dict, defaults: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if isinstance(defaults.get(key), dict) and isinstance(value, dict):
            out[key] = _merge(value, defaults[key])
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: list[str] = (), seed: int | None = None,
                output_dir: str | None = None) -> dict:
    user: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: line {e.lineno}, column {e.colno}: "
                              f"{e.msg}") from e
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    _validate(user, DEFAULTS)
    cfg = _merge(user, DEFAULTS)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        walk = DEFAULTS
        for part in parts[:-1]:
            if part not in walk or not isinstance(walk[part], dict):
                raise ConfigError(f"unknown config key '{key}'")
            node = node.setdefault(part, {})
            walk = walk[part]
        if parts[-1] not in walk:
            raise ConfigError(f"unknown config key '{key}'")
        node[parts[-1]] = value
    if seed is not None:
        cfg["seed"] = seed
    if output_dir is not None:
        cfg["output_dir"] = output_dir
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    d = cfg["dataset"]
    return SyntheticSpec(num_classes=d["num_classes"], train_per_class=d["train_per_class"],
                         test_per_class=d["test_per_class"], image_size=d["image_size"],
                         channels=d["channels"], amplitude=d["amplitude"], noise=d["noise"])


def attack_config(d: dict) -> AttackConfig:
    return AttackConfig(epsilon=d["epsilon"], step_size=d["step_size"], steps=d["steps"],
                        random_start_radius=d["random_start_radius"],
                        loss_kind=d["loss_kind"])


def pretrain_config(cfg: dict) -> PretrainConfig:
    p = cfg["pretrain"]
    return PretrainConfig(epochs=p["epochs"], batch_size=p["batch_size"], lr=p["lr"],
                          momentum=p["momentum"], weight_decay=p["weight_decay"],
                          attack=attack_config(p["attack"]), eval_steps=p["eval_steps"],
                          seed=cfg["seed"])


_MODE_ALIASES = {"adaptive": "adaptive", "vanilla": "vanilla",
                 "ita-gen-only": "ita_gen_only", "ita_gen_only": "ita_gen_only",
                 "ita": "ita"}


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    d = cfg["dataset"]
    mode = _MODE_ALIASES.get(t["mode"])
    if mode is None:
        raise ConfigError(f"unknown train.mode {t['mode']!r}; "
                          f"use adaptive, vanilla, or ita-gen-only")
    return TrainConfig(
        num_classes=d["num_classes"], image_channels=d["channels"],
        image_size=d["image_size"], epochs=t["epochs"],
        generator_iters=t["generator_iters"], student_iters=t["student_iters"],
        batch_size=t["batch_size"], student_widths=tuple(t["student_widths"]),
        student_stem_stride=t["student_stem_stride"],
        student_lr=t["student_lr"], student_momentum=t["student_momentum"],
        student_weight_decay=t["student_weight_decay"],
        generator_latent=t["generator_latent"], generator_channels=t["generator_channels"],
        generator_lr=t["generator_lr"],
        generator_betas=(t["generator_beta1"], t["generator_beta2"]),
        attack=attack_config(t["attack"]),
        selection_attack=attack_config(t["selection_attack"]),
        mode=mode, vanilla_tau=t["vanilla_tau"], vanilla_lambda=t["vanilla_lambda"],
        label_sampling=t["label_sampling"], eval_every=t["eval_every"],
        eval_batch_size=t["eval_batch_size"], seed=cfg["seed"])


def attack_suite(cfg: dict) -> AttackSuite:
    e = cfg["evaluate"]
    return AttackSuite(epsilon=e["epsilon"], step_size=e["step_size"], steps=e["steps"])
