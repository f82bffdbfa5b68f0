"""Experiment front end.

Subcommands: pretrain-teacher, distill, evaluate, entropy-report,
temp-experiment, plot. Every run writes its artifacts under the configured
output directory: a copy of the resolved config, metrics, checkpoints, and
a JSON report embedding the seed and config hash. Exit codes: 0 success,
1 config error, 2 runtime error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoints import CheckpointError, load_model, save_model
from .config import ConfigError
from .data import DataFormatError, load_dataset, make_synthetic_dataset, save_dataset
from .evaluation import entropy_report, evaluate_robustness
from .experiments import temperature_strategy_experiment
from .layers import FrozenModelError
from .models import ConvClassifier, InputError
from .svgplot import line_plot_svg
from .tensor import NumericalError
from .training import (DistillationTrainer, TrainingDiverged, pretrain_robust_teacher,
                       rows_to_csv)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


@contextlib.contextmanager
def _locked_dir(path: Path):
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"output directory {path} is locked by another run "
                           f"(remove {lock} if that run is dead)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield path
    finally:
        lock.unlink(missing_ok=True)


def _run_info(cfg: dict) -> dict:
    return {"seed": cfg["seed"], "config_hash": cfgmod.config_hash(cfg),
            "blas_threads": os.environ.get("OPENBLAS_NUM_THREADS",
                                           os.environ.get("OMP_NUM_THREADS", "default")),
            "cpu_count": os.cpu_count()}


def _write_run_files(out: Path, cfg: dict) -> None:
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    (out / "run.json").write_text(json.dumps(_run_info(cfg), indent=2, sort_keys=True) + "\n")


def _load_datasets(cfg: dict):
    d = cfg["dataset"]
    if d["kind"] == "synthetic":
        return make_synthetic_dataset(cfgmod.synthetic_spec(cfg), d["seed"])
    if d["kind"] in ("raw", "png_dir"):
        if not d["train_path"] or not d["test_path"]:
            raise ConfigError("dataset.kind raw/png_dir needs dataset.train_path "
                              "and dataset.test_path")
        return (load_dataset(d["train_path"], d["kind"], split="train"),
                load_dataset(d["test_path"], d["kind"], split="test"))
    raise ConfigError(f"unknown dataset.kind {d['kind']!r}")


def _load_teacher(cfg: dict) -> ConvClassifier:
    path = cfg["teacher"]["checkpoint"]
    if not path:
        raise ConfigError("teacher.checkpoint is required for this subcommand")
    model, _ = load_model(path)
    return model.freeze()


def cmd_pretrain_teacher(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    with _locked_dir(out):
        _write_run_files(out, cfg)
        train_set, test_set = _load_datasets(cfg)
        save_dataset(train_set, out / "train.dfd")
        save_dataset(test_set, out / "test.dfd")
        teacher = ConvClassifier(train_set.num_classes, train_set.image_shape[0],
                                 tuple(cfg["teacher"]["widths"]),
                                 cfg["teacher"]["stem_stride"], seed=cfg["seed"])
        report = pretrain_robust_teacher(teacher, train_set, test_set,
                                         cfgmod.pretrain_config(cfg))
        meta = {**_run_info(cfg), **report}
        save_model(teacher, out / "teacher.ckpt", metadata=meta)
        (out / "report.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        print(f"teacher: clean {report['clean_accuracy']:.2f}% | "
              f"pgd-{report['attack_steps']} {report['robust_accuracy']:.2f}%")
        print(f"saved {out / 'teacher.ckpt'}")
    return EXIT_OK


def cmd_distill(cfg: dict, resume: bool) -> int:
    out = Path(cfg["output_dir"])
    with _locked_dir(out):
        _write_run_files(out, cfg)
        _, test_set = _load_datasets(cfg)
        teacher = _load_teacher(cfg)
        tconf = cfgmod.train_config(cfg)
        state_path = out / "state.ckpt"
        if resume and state_path.exists():
            trainer = DistillationTrainer.from_state(state_path, tconf, teacher, test_set)
            print(f"resumed at epoch {trainer.state.epoch}")
        else:
            trainer = DistillationTrainer(tconf, teacher, test_set)
        hash_ = cfgmod.config_hash(cfg)
        every = cfg["train"]["checkpoint_every"]
        while trainer.state.epoch < tconf.epochs:
            trainer.run(until_epoch=trainer.state.epoch + every)
            trainer.save_state(state_path, config_hash=hash_)
        report = trainer.report()
        meta = _run_info(cfg)
        (out / "metrics.csv").write_text(rows_to_csv(report.rows))
        with open(out / "eval.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "pgd_t_accuracy"])
            w.writerows(report.eval_history)
        save_model(report.student, out / "final.ckpt", metadata=meta)
        save_model(trainer.state.generator, out / "generator.ckpt", metadata=meta)
        best = ConvClassifier(tconf.num_classes, tconf.image_channels,
                              tconf.student_widths, tconf.student_stem_stride, seed=tconf.seed)
        if report.best_student_state is not None:
            best.load_state_dict(report.best_student_state)
        save_model(best, out / "best.ckpt",
                   metadata={**meta, "epoch": report.best_epoch,
                             "pgd_t_accuracy": report.best_accuracy})
        (out / "report.json").write_text(json.dumps(
            {**meta, "best_epoch": report.best_epoch,
             "best_pgd_t_accuracy": report.best_accuracy,
             "eval_history": report.eval_history}, indent=2, sort_keys=True) + "\n")
        print(f"best checkpoint: epoch {report.best_epoch} "
              f"(pgd_t {report.best_accuracy:.2f}%) -> {out / 'best.ckpt'}")
    return EXIT_OK


def cmd_evaluate(cfg: dict, checkpoint: str | None) -> int:
    out = Path(cfg["output_dir"])
    ckpt = checkpoint or cfg["evaluate"]["checkpoint"]
    if not ckpt:
        raise ConfigError("evaluate needs a checkpoint (positional argument or "
                          "evaluate.checkpoint)")
    with _locked_dir(out):
        _write_run_files(out, cfg)
        _, test_set = _load_datasets(cfg)
        model, _ = load_model(ckpt)
        report = evaluate_robustness(model, test_set, cfgmod.attack_suite(cfg),
                                     seed=cfg["seed"], batch_size=cfg["evaluate"]["batch_size"],
                                     model_id=str(ckpt))
        payload = json.loads(report.to_json())
        payload.update(_run_info(cfg))
        (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        (out / "report.txt").write_text(report.table() + "\n")
        print(report.table())
    return EXIT_OK


def cmd_entropy_report(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    e = cfg["entropy"]
    t_path = e["teacher_checkpoint"] or cfg["teacher"]["checkpoint"]
    g_path = e["generator_checkpoint"]
    if not t_path or not g_path:
        raise ConfigError("entropy-report needs entropy.teacher_checkpoint (or "
                          "teacher.checkpoint) and entropy.generator_checkpoint")
    with _locked_dir(out):
        _write_run_files(out, cfg)
        teacher, _ = load_model(t_path)
        teacher.freeze()
        generator, _ = load_model(g_path)
        trace = entropy_report(teacher, generator, e["n_batches"], e["batch_size"],
                               seed=cfg["seed"])
        with open(out / "entropy.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["batch", "teacher_entropy"])
            for i, h in enumerate(trace):
                w.writerow([i, repr(h)])
        print(f"mean teacher entropy over {len(trace)} batches: {np.mean(trace):.4f} nats")
    return EXIT_OK


def cmd_temp_experiment(cfg: dict) -> int:
    out = Path(cfg["output_dir"])
    with _locked_dir(out):
        _write_run_files(out, cfg)
        _, test_set = _load_datasets(cfg)
        teacher = _load_teacher(cfg)
        tconf = cfgmod.train_config(cfg)
        comparison = temperature_strategy_experiment(
            tconf, teacher, test_set, seeds=tuple(cfg["temp_experiment"]["seeds"]))
        rows = [{"strategy": r.strategy, "seed": r.seed,
                 "best_accuracy": r.best_accuracy, "best_epoch": r.best_epoch}
                for r in comparison.results]
        (out / "report.json").write_text(json.dumps(
            {**_run_info(cfg), "results": rows,
             "means": comparison.best_by_strategy()}, indent=2, sort_keys=True) + "\n")
        (out / "report.txt").write_text(comparison.table() + "\n")
        print(comparison.table())
    return EXIT_OK


_PLOT_KINDS = {
    "tau": ("tau_tilde", "interactive temperature"),
    "lambda": ("lambda", "generator balance weight"),
    "loss": (None, "loss"),
    "entropy": ("teacher_entropy", "teacher entropy (nats)"),
    "accuracy": ("pgd_t_accuracy", "robust accuracy (%)"),
}


def cmd_plot(metrics_path: str, kind: str, out_path: str, cfg: dict) -> int:
    if kind not in _PLOT_KINDS:
        raise ConfigError(f"plot kind must be one of {sorted(_PLOT_KINDS)}, got {kind!r}")
    path = Path(metrics_path)
    if not path.exists():
        raise ConfigError(f"metrics file not found: {metrics_path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
    if kind == "loss":
        series = {}
        for col in ("loss_cls", "loss_adv", "loss_gen", "loss_kd"):
            pts = [(i, float(r[col])) for i, r in enumerate(rows) if r.get(col)]
            if pts:
                series[col] = ([p[0] for p in pts], [p[1] for p in pts])
    else:
        col, _ = _PLOT_KINDS[kind]
        if rows and col not in rows[0]:
            raise ConfigError(f"column '{col}' not present in {metrics_path}")
        pts = [(i, float(r[col])) for i, r in enumerate(rows) if r.get(col)]
        series = {col: ([p[0] for p in pts], [p[1] for p in pts])}
    svg = line_plot_svg(series, title=f"{kind} ({path.name})", x_label="record",
                        y_label=_PLOT_KINDS[kind][1])
    svg += f"\n<!-- seed={cfg['seed']} config={cfgmod.config_hash(cfg)} -->\n"
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(svg)
    print(f"wrote {out_path}")
    return EXIT_OK


def _build_parser() -> _Parser:
    parser = _Parser(prog="advdistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config leaf (repeatable)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")

    for name in ("pretrain-teacher", "entropy-report", "temp-experiment"):
        common(sub.add_parser(name))
    p = sub.add_parser("distill")
    common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the output directory's last state")
    p = sub.add_parser("evaluate")
    common(p)
    p.add_argument("checkpoint", nargs="?", default=None)
    p = sub.add_parser("plot")
    common(p)
    p.add_argument("metrics", help="metrics.csv or eval.csv from a run")
    p.add_argument("kind", choices=sorted(_PLOT_KINDS))
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = cfgmod.load_config(args.config, args.set, args.seed, args.out)
        if args.command == "pretrain-teacher":
            return cmd_pretrain_teacher(cfg)
        if args.command == "distill":
            return cmd_distill(cfg, args.resume)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint)
        if args.command == "entropy-report":
            return cmd_entropy_report(cfg)
        if args.command == "temp-experiment":
            return cmd_temp_experiment(cfg)
        if args.command == "plot":
            out_path = args.out or (Path(args.metrics).parent / f"{args.kind}.svg")
            return cmd_plot(args.metrics, args.kind, str(out_path), cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DataFormatError, InputError, CheckpointError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, TrainingDiverged) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (RuntimeError, OSError, FrozenModelError, ValueError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
