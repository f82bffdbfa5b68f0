"""Two-stage data-free distillation training loop and teacher pretraining.

Each epoch alternates a generation stage (sample noise and labels, update
the generator on the weighted classification + adversarial objective) and a
distillation stage (synthesize a batch, craft adversarial examples against
the student, update the student on the softened KL toward the teacher).
The temperature and loss weight are recomputed per batch from clean-sample
confidence statistics according to the configured mode.

The full trainer state (parameters, optimizer accumulators, RNG state,
metric histories, best checkpoint) serializes to a single checkpoint file
and resumes bitwise.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .adaptive import adaptive_lambda, confidence_stats, interactive_temperature
from .attacks import AttackConfig, craft_training_adversarial, pgd
from .checkpoints import load_checkpoint, save_checkpoint
from .data import ImageDataset
from .losses import (adversarial_generation_loss, classification_loss, distillation_loss,
                     generator_loss, information_entropy)
from .models import ConditionalGenerator, ConvClassifier, InputError, softmax_with_temperature
from .optim import Adam, SGD, cosine_lr

MODES = ("adaptive", "vanilla", "ita_gen_only", "ita", "scheduled")

METRIC_COLUMNS = ("epoch", "batch", "tau_tilde", "lambda", "loss_cls", "loss_adv",
                  "loss_gen", "loss_kd", "teacher_entropy", "student_lr")


class TrainingDiverged(RuntimeError):
    pass


def default_training_attack() -> AttackConfig:
    return AttackConfig(epsilon=8 / 255, step_size=2 / 255, steps=10,
                        random_start_radius=0.001, loss_kind="kd_vs_teacher")


def default_selection_attack() -> AttackConfig:
    return AttackConfig(epsilon=8 / 255, step_size=2 / 255, steps=20,
                        random_start_radius=8 / 255, loss_kind="kl_vs_clean")


@dataclass(frozen=True)
class TrainConfig:
    num_classes: int = 10
    image_channels: int = 3
    image_size: int = 32
    epochs: int = 200
    generator_iters: int = 1
    student_iters: int = 5
    batch_size: int = 256
    student_widths: tuple[int, int, int] = (8, 16, 32)
    student_stem_stride: int = 1
    student_lr: float = 0.05
    student_momentum: float = 0.9
    student_weight_decay: float = 1e-4
    generator_latent: int = 1024
    generator_channels: int = 256
    generator_lr: float = 1e-3
    generator_betas: tuple[float, float] = (0.5, 0.999)
    attack: AttackConfig = field(default_factory=default_training_attack)
    selection_attack: AttackConfig = field(default_factory=default_selection_attack)
    mode: str = "adaptive"
    vanilla_tau: float = 3.0
    vanilla_lambda: float = 0.3
    tau_schedule: tuple[tuple[float, float], ...] | None = None
    label_sampling: str = "uniform"
    eval_every: int = 5
    eval_batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.generator_iters < 1 or self.student_iters < 1:
            raise InputError("epochs and per-epoch iteration counts must be >= 1")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in ("vanilla", "ita_gen_only", "ita", "scheduled"):
            if self.vanilla_tau < 1:
                raise InputError(f"fixed temperature must be >= 1, got {self.vanilla_tau}")
            if not 0 < self.vanilla_lambda <= 1:
                raise InputError(f"fixed loss weight must be in (0, 1], got {self.vanilla_lambda}")
        if self.mode == "scheduled" and not self.tau_schedule:
            raise InputError("scheduled mode needs a tau_schedule")
        if self.image_size % 4 != 0:
            raise InputError("image_size must be a multiple of 4 (generator upsamples twice)")
        if self.label_sampling not in ("uniform", "teacher"):
            raise InputError(f"label_sampling must be 'uniform' or 'teacher'")

    def scheduled_tau(self, epoch: int) -> float:
        tau = self.tau_schedule[0][1]
        for frac, value in self.tau_schedule:
            if epoch >= frac * self.epochs:
                tau = value
        return float(tau)


@dataclass
class TrainState:
    epoch: int
    student: ConvClassifier
    generator: ConditionalGenerator
    student_opt: SGD
    generator_opt: Adam
    rng: np.random.Generator
    rows: list[dict] = field(default_factory=list)
    eval_history: list[tuple[int, float]] = field(default_factory=list)
    best_accuracy: float = -1.0
    best_epoch: int = -1
    best_student: dict[str, np.ndarray] | None = None


@dataclass
class RunReport:
    config: TrainConfig
    rows: list[dict]
    eval_history: list[tuple[int, float]]
    best_epoch: int
    best_accuracy: float
    student: ConvClassifier
    best_student_state: dict[str, np.ndarray] | None

    def tau_by_epoch(self) -> dict[int, float]:
        sums: dict[int, list[float]] = {}
        for row in self.rows:
            sums.setdefault(row["epoch"], []).append(row["tau_tilde"])
        return {e: float(np.mean(v)) for e, v in sums.items()}


def rows_to_csv(rows: list[dict]) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for row in rows:
        cells = []
        for col in METRIC_COLUMNS:
            v = row.get(col)
            cells.append("" if v is None else repr(v) if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


class DistillationTrainer:
    """Runs the alternating generation/distillation loop for one student."""

    def __init__(self, config: TrainConfig, teacher: ConvClassifier,
                 eval_set: ImageDataset | None = None):
        if not teacher.frozen:
            teacher.freeze()
        if teacher.num_classes != config.num_classes:
            raise InputError(f"teacher has {teacher.num_classes} classes, "
                             f"config says {config.num_classes}")
        self.config = config
        self.teacher = teacher
        self.eval_set = eval_set
        student = ConvClassifier(config.num_classes, config.image_channels,
                                 config.student_widths, config.student_stem_stride,
                                 seed=config.seed)
        generator = ConditionalGenerator(config.num_classes, config.generator_latent,
                                         base_size=config.image_size // 4,
                                         base_channels=config.generator_channels,
                                         out_channels=config.image_channels, seed=config.seed)
        self.state = TrainState(
            epoch=0,
            student=student,
            generator=generator,
            student_opt=SGD(student.parameters(), config.student_lr,
                            config.student_momentum, config.student_weight_decay),
            generator_opt=Adam(generator.parameters(), config.generator_lr,
                               config.generator_betas),
            rng=np.random.default_rng(np.random.SeedSequence([config.seed, 0x7E41])),
        )

    # ----- adaptive rule dispatch -------------------------------------------------

    def _gen_tau_lambda(self, stats, epoch: int) -> tuple[float, float]:
        mode = self.config.mode
        if mode in ("adaptive", "ita_gen_only"):
            return interactive_temperature(stats), adaptive_lambda(stats)
        if mode == "ita":
            return interactive_temperature(stats), self.config.vanilla_lambda
        if mode == "scheduled":
            return self.config.scheduled_tau(epoch), self.config.vanilla_lambda
        return self.config.vanilla_tau, self.config.vanilla_lambda

    def _distill_tau(self, stats, epoch: int) -> float:
        mode = self.config.mode
        if mode in ("adaptive", "ita"):
            return interactive_temperature(stats)
        if mode == "scheduled":
            return self.config.scheduled_tau(epoch)
        return self.config.vanilla_tau  # vanilla and ita_gen_only

    # ----- sampling ---------------------------------------------------------------

    def _sample_batch(self) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        z = self.state.rng.standard_normal((cfg.batch_size, cfg.generator_latent),
                                           dtype=np.float32)
        labels = self.state.rng.integers(0, cfg.num_classes, size=cfg.batch_size)
        if cfg.label_sampling == "teacher":
            with T.no_grad():
                images = self.state.generator(z, labels)
                logits = self.teacher.forward(images.data, training=False)
            labels = np.argmax(logits.data, axis=1)
        return z, labels

    # ----- stages -----------------------------------------------------------------

    def generation_stage(self, lr: float) -> None:
        cfg, st = self.config, self.state
        for j in range(cfg.generator_iters):
            z, labels = self._sample_batch()
            st.generator.zero_grad()
            images = st.generator(z, labels)
            with self._student_grads_off():
                t_logits = self.teacher.forward(images, training=False)
                s_logits = self.student.forward(images, training=False)
                stats = confidence_stats(t_logits, s_logits)
                tau, lam = self._gen_tau_lambda(stats, st.epoch)
                cls = classification_loss(t_logits, labels)
                adv = adversarial_generation_loss(t_logits, s_logits, tau)
                total = generator_loss(cls, adv, lam)
                total.value.backward()
            st.generator_opt.step()
            _, entropy = information_entropy(softmax_with_temperature(t_logits.data, 1.0))
            st.rows.append({"epoch": st.epoch, "batch": j, "tau_tilde": tau, "lambda": lam,
                            "loss_cls": cls.scalar, "loss_adv": adv.scalar,
                            "loss_gen": total.scalar, "loss_kd": None,
                            "teacher_entropy": entropy, "student_lr": lr})

    def distillation_stage(self, lr: float) -> None:
        cfg, st = self.config, self.state
        st.student_opt.lr = lr
        for j in range(cfg.student_iters):
            z, labels = self._sample_batch()
            with T.no_grad():
                images = st.generator(z, labels).data
                t_clean = self.teacher.forward(images, training=False)
                s_clean = self.student.forward(images, training=False)
            stats = confidence_stats(t_clean, s_clean)
            tau = self._distill_tau(stats, st.epoch)
            adv_images = craft_training_adversarial(self.student, self.teacher, images,
                                                    cfg.attack, st.rng)
            st.student.zero_grad()
            t_logits = self.teacher.forward(adv_images, training=False)
            s_logits = self.student.forward(adv_images, training=True)
            kd = distillation_loss(t_logits, s_logits, tau)
            kd.value.backward()
            st.student_opt.step()
            _, entropy = information_entropy(softmax_with_temperature(t_clean.data, 1.0))
            st.rows.append({"epoch": st.epoch, "batch": cfg.generator_iters + j,
                            "tau_tilde": tau, "lambda": None, "loss_cls": None,
                            "loss_adv": None, "loss_gen": None, "loss_kd": kd.scalar,
                            "teacher_entropy": entropy, "student_lr": lr})

    @property
    def student(self) -> ConvClassifier:
        return self.state.student

    @contextlib.contextmanager
    def _student_grads_off(self):
        flags = [(p, p.requires_grad) for p in self.student.parameters()]
        for p, _ in flags:
            p.requires_grad = False
        try:
            yield
        finally:
            for p, f in flags:
                p.requires_grad = f

    # ----- evaluation and selection -------------------------------------------------

    def _selection_accuracy(self, completed_epoch: int) -> float:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence(
            [cfg.seed, 0xE7A1, completed_epoch]))
        return attack_accuracy(self.student, self.eval_set, cfg.selection_attack,
                               rng, batch_size=cfg.eval_batch_size)

    def run(self, until_epoch: int | None = None) -> RunReport:
        cfg, st = self.config, self.state
        stop = cfg.epochs if until_epoch is None else min(until_epoch, cfg.epochs)
        teacher_before = self.teacher.param_bytes()
        while st.epoch < stop:
            lr = cosine_lr(cfg.student_lr, st.epoch, cfg.epochs)
            self.generation_stage(lr)
            self.distillation_stage(lr)
            st.epoch += 1
            if self.eval_set is not None and (
                    st.epoch % cfg.eval_every == 0 or st.epoch == cfg.epochs):
                acc = self._selection_accuracy(st.epoch)
                st.eval_history.append((st.epoch, acc))
                if acc > st.best_accuracy:
                    st.best_accuracy = acc
                    st.best_epoch = st.epoch
                    st.best_student = {k: v.copy() for k, v in
                                       self.student.state_dict().items()}
        assert self.teacher.param_bytes() == teacher_before, "teacher parameters changed"
        return self.report()

    def report(self) -> RunReport:
        st = self.state
        return RunReport(self.config, st.rows, st.eval_history, st.best_epoch,
                         st.best_accuracy, st.student, st.best_student)

    # ----- serialization ------------------------------------------------------------

    def save_state(self, path, config_hash: str = "") -> None:
        st = self.state
        tensors: dict[str, np.ndarray] = {}
        for name, arr in st.student.state_dict().items():
            tensors[f"student/{name}"] = arr
        for name, arr in st.generator.state_dict().items():
            tensors[f"generator/{name}"] = arr
        for i, v in enumerate(st.student_opt.state_dict()["velocity"]):
            tensors[f"opt_s/velocity/{i}"] = v
        gstate = st.generator_opt.state_dict()
        for i, (m, v) in enumerate(zip(gstate["m"], gstate["v"])):
            tensors[f"opt_g/m/{i}"] = m
            tensors[f"opt_g/v/{i}"] = v
        if st.best_student is not None:
            for name, arr in st.best_student.items():
                tensors[f"best_student/{name}"] = arr
        meta = {
            "epoch": st.epoch,
            "adam_t": st.generator_opt.t,
            "rng_state": st.rng.bit_generator.state,
            "rows": st.rows,
            "eval_history": st.eval_history,
            "best_accuracy": st.best_accuracy,
            "best_epoch": st.best_epoch,
            "has_best": st.best_student is not None,
            "seed": self.config.seed,
            "config_hash": config_hash,
        }
        arch = {"student": st.student.descriptor(), "generator": st.generator.descriptor()}
        save_checkpoint(path, tensors, arch, meta)

    @classmethod
    def from_state(cls, path, config: TrainConfig, teacher: ConvClassifier,
                   eval_set: ImageDataset | None = None) -> "DistillationTrainer":
        trainer = cls(config, teacher, eval_set)
        ckpt = load_checkpoint(path)
        st = trainer.state
        arch = {"student": st.student.descriptor(), "generator": st.generator.descriptor()}
        if ckpt.architecture != arch:
            raise InputError(f"state architecture mismatch: {ckpt.architecture} vs {arch}")
        pick = lambda prefix: {k[len(prefix):]: v for k, v in ckpt.tensors.items()
                               if k.startswith(prefix)}
        st.student.load_state_dict(pick("student/"))
        st.generator.load_state_dict(pick("generator/"))
        n_s = len(st.student_opt.velocity)
        st.student_opt.load_state_dict({
            "lr": st.student_opt.lr,
            "velocity": [ckpt.tensors[f"opt_s/velocity/{i}"] for i in range(n_s)]})
        n_g = len(st.generator_opt.m)
        st.generator_opt.load_state_dict({
            "lr": st.generator_opt.lr, "t": ckpt.metadata["adam_t"],
            "m": [ckpt.tensors[f"opt_g/m/{i}"] for i in range(n_g)],
            "v": [ckpt.tensors[f"opt_g/v/{i}"] for i in range(n_g)]})
        meta = ckpt.metadata
        st.epoch = meta["epoch"]
        state = meta["rng_state"]
        state["state"] = {k: int(v) for k, v in state["state"].items()}
        st.rng.bit_generator.state = state
        st.rows = meta["rows"]
        st.eval_history = [tuple(x) for x in meta["eval_history"]]
        st.best_accuracy = meta["best_accuracy"]
        st.best_epoch = meta["best_epoch"]
        if meta["has_best"]:
            st.best_student = pick("best_student/")
        return trainer


def attack_accuracy(model: ConvClassifier, dataset: ImageDataset,
                    attack: AttackConfig | None, rng: np.random.Generator | None,
                    batch_size: int = 256) -> float:
    """Percent accuracy on a dataset, optionally after an attack."""
    if len(dataset) == 0:
        raise InputError("empty evaluation set")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        if attack is not None:
            x = pgd(model, x, attack, rng=rng, labels=y)
        with T.no_grad():
            logits = model.forward(x, training=False)
        correct += int((np.argmax(logits.data, axis=1) == y).sum())
    return 100.0 * correct / len(dataset)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(
        epsilon=8 / 255, step_size=2 / 255, steps=10, random_start_radius=0.001,
        loss_kind="cross_entropy"))
    eval_steps: int = 20
    seed: int = 0


def pretrain_robust_teacher(model: ConvClassifier, train_set: ImageDataset,
                            test_set: ImageDataset, config: PretrainConfig) -> dict:
    """Madry-style adversarial training; returns clean and robust accuracy."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xADAD]))
    opt = SGD(model.parameters(), config.lr, config.momentum, config.weight_decay)
    n = len(train_set)
    initial_loss = None
    bad_epochs = 0
    epsilon_zero = config.attack.epsilon == 0
    for epoch in range(config.epochs):
        opt.lr = cosine_lr(config.lr, epoch, config.epochs)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x = train_set.images[idx]
            y = train_set.labels[idx]
            if not epsilon_zero:
                x = pgd(model, x, config.attack, rng=rng, labels=y)
            model.zero_grad()
            logits = model.forward(x, training=True)
            loss = classification_loss(logits, y)
            loss.value.backward()
            opt.step()
            losses.append(loss.scalar)
            if initial_loss is None:
                initial_loss = losses[0]  # first batch, computed pre-update
        mean_loss = float(np.mean(losses))
        if mean_loss > 10.0 * initial_loss:
            bad_epochs += 1
            if bad_epochs >= 3:
                raise TrainingDiverged(f"loss {mean_loss:.3f} stayed above 10x the initial "
                                       f"{initial_loss:.3f} for 3 consecutive epochs")
        else:
            bad_epochs = 0
    eval_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xE7A2]))
    clean = attack_accuracy(model, test_set, None, None, config.batch_size)
    eps = config.attack.epsilon
    robust_attack = AttackConfig(epsilon=eps, step_size=config.attack.step_size,
                                 steps=config.eval_steps, random_start_radius=eps,
                                 loss_kind="cross_entropy")
    robust = attack_accuracy(model, test_set, robust_attack, eval_rng, config.batch_size)
    return {"clean_accuracy": clean, "robust_accuracy": robust,
            "attack_steps": config.eval_steps, "epochs": config.epochs}
