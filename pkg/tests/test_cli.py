import csv
import json
import re

import numpy as np
import pytest

from advdistill.cli import main
from advdistill.config import ConfigError, config_hash, load_config

TINY = {
    "seed": 3,
    "dataset": {"num_classes": 4, "train_per_class": 12, "test_per_class": 8,
                "image_size": 16, "amplitude": 0.2, "noise": 0.1, "seed": 1},
    "teacher": {"widths": [3, 4, 6]},
    "pretrain": {"epochs": 2, "batch_size": 16, "eval_steps": 2,
                 "attack": {"epsilon": 0.0, "step_size": 0.0, "steps": 1,
                            "random_start_radius": 0.0, "loss_kind": "cross_entropy"}},
    "train": {"epochs": 2, "generator_iters": 1, "student_iters": 2, "batch_size": 8,
              "student_widths": [2, 3, 4], "generator_latent": 16, "generator_channels": 8,
              "eval_every": 5, "eval_batch_size": 16,
              "attack": {"epsilon": 8 / 255, "step_size": 2 / 255, "steps": 2,
                         "random_start_radius": 0.001, "loss_kind": "kd_vs_teacher"},
              "selection_attack": {"epsilon": 8 / 255, "step_size": 2 / 255, "steps": 2,
                                   "random_start_radius": 8 / 255, "loss_kind": "kl_vs_clean"}},
    "evaluate": {"steps": 2, "batch_size": 16},
    "entropy": {"n_batches": 2, "batch_size": 8},
    "temp_experiment": {"seeds": [0]},
}


def write_config(tmp_path, extra=None):
    cfg = json.loads(json.dumps(TINY))
    if extra:
        for key, value in extra.items():
            node = cfg
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def teacher_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("teacher")
    cfg = write_config(tmp)
    rc = main(["pretrain-teacher", "--config", cfg, "--out", str(tmp / "run")])
    assert rc == 0
    return tmp / "run"


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"trin": {"epochs": 2}}))
        with pytest.raises(ConfigError, match="unknown config key 'trin'"):
            load_config(str(path))

    def test_unknown_nested_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"train": {"epoks": 2}}))
        with pytest.raises(ConfigError, match="train.epoks"):
            load_config(str(path))

    def test_set_overrides_and_hash(self, tmp_path):
        cfg_path = write_config(tmp_path)
        base = load_config(cfg_path)
        over = load_config(cfg_path, ["train.epochs=7", "train.mode=vanilla"])
        assert over["train"]["epochs"] == 7
        assert over["train"]["mode"] == "vanilla"
        assert config_hash(base) != config_hash(over)
        assert config_hash(base) == config_hash(load_config(cfg_path))

    def test_set_unknown_key_rejected(self, tmp_path):
        cfg_path = write_config(tmp_path)
        with pytest.raises(ConfigError, match="unknown config key"):
            load_config(cfg_path, ["train.bogus=1"])

    def test_missing_config_file(self):
        assert main(["distill", "--config", "/nope/missing.json"]) == 1

    def test_invalid_json_reports_position(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  broken\n}")
        with pytest.raises(ConfigError, match="line"):
            load_config(str(path))


class TestPretrainTeacher:
    def test_artifacts(self, teacher_dir):
        for name in ("teacher.ckpt", "report.json", "config.json", "run.json",
                     "train.dfd", "test.dfd"):
            assert (teacher_dir / name).exists(), name
        report = json.loads((teacher_dir / "report.json").read_text())
        assert "clean_accuracy" in report and "config_hash" in report and "seed" in report
        assert not (teacher_dir / ".lock").exists()


class TestDistill:
    def run_distill(self, tmp_path, teacher_dir, out_name, extra_args=()):
        cfg = write_config(tmp_path)
        out = tmp_path / out_name
        rc = main(["distill", "--config", cfg,
                   "--set", f"teacher.checkpoint={teacher_dir / 'teacher.ckpt'}",
                   "--out", str(out), *extra_args])
        assert rc == 0
        return out

    def test_run_directory_contents(self, tmp_path, teacher_dir):
        out = self.run_distill(tmp_path, teacher_dir, "run1")
        for name in ("config.json", "run.json", "metrics.csv", "eval.csv", "final.ckpt",
                     "best.ckpt", "generator.ckpt", "state.ckpt", "report.json"):
            assert (out / name).exists(), name
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == ("epoch,batch,tau_tilde,lambda,loss_cls,loss_adv,loss_gen,"
                          "loss_kd,teacher_entropy,student_lr")
        report = json.loads((out / "report.json").read_text())
        assert "config_hash" in report and "best_epoch" in report

    def test_identical_config_seed_identical_metrics(self, tmp_path, teacher_dir):
        a = self.run_distill(tmp_path, teacher_dir, "runA")
        b = self.run_distill(tmp_path, teacher_dir, "runB")
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()

    def test_vanilla_mode_constant_columns(self, tmp_path, teacher_dir):
        out = self.run_distill(tmp_path, teacher_dir, "runV",
                               ("--set", "train.mode=vanilla"))
        with open(out / "metrics.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert all(float(r["tau_tilde"]) == 3.0 for r in rows)
        assert all(float(r["lambda"]) == 0.3 for r in rows if r["lambda"])

    def test_resume_matches_uninterrupted(self, tmp_path, teacher_dir):
        full = self.run_distill(tmp_path, teacher_dir, "runFull",
                                ("--set", "train.epochs=4"))
        part = self.run_distill(tmp_path, teacher_dir, "runPart",
                                ("--set", "train.epochs=2"))
        cfg = write_config(tmp_path)
        rc = main(["distill", "--config", cfg,
                   "--set", f"teacher.checkpoint={teacher_dir / 'teacher.ckpt'}",
                   "--set", "train.epochs=4", "--out", str(part), "--resume"])
        assert rc == 0
        assert (part / "metrics.csv").read_bytes() == (full / "metrics.csv").read_bytes()

    def test_locked_directory_exits_2(self, tmp_path, teacher_dir):
        cfg = write_config(tmp_path)
        out = tmp_path / "locked"
        out.mkdir()
        (out / ".lock").write_text("123")
        rc = main(["distill", "--config", cfg,
                   "--set", f"teacher.checkpoint={teacher_dir / 'teacher.ckpt'}",
                   "--out", str(out)])
        assert rc == 2


class TestEvaluate:
    def test_epsilon_zero_robust_equals_clean(self, tmp_path, teacher_dir):
        cfg = write_config(tmp_path)
        out = tmp_path / "eval0"
        rc = main(["evaluate", str(teacher_dir / "teacher.ckpt"), "--config", cfg,
                   "--set", "evaluate.epsilon=0", "--set", "evaluate.step_size=0",
                   "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        acc = report["accuracies"]
        for name in ("fgsm", "pgd_s", "pgd_t", "cw"):
            assert acc[name] == acc["clean"]
        assert (out / "report.txt").exists()

    def test_missing_checkpoint_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path)
        rc = main(["evaluate", "--config", cfg, "--out", str(tmp_path / "e")])
        assert rc == 1


class TestEntropyAndExperiment:
    def test_entropy_report(self, tmp_path, teacher_dir):
        # needs a generator checkpoint from a distill run
        cfg = write_config(tmp_path)
        dist_out = tmp_path / "dist"
        assert main(["distill", "--config", cfg,
                     "--set", f"teacher.checkpoint={teacher_dir / 'teacher.ckpt'}",
                     "--out", str(dist_out)]) == 0
        out = tmp_path / "entropy"
        rc = main(["entropy-report", "--config", cfg,
                   "--set", f"entropy.teacher_checkpoint={teacher_dir / 'teacher.ckpt'}",
                   "--set", f"entropy.generator_checkpoint={dist_out / 'generator.ckpt'}",
                   "--out", str(out)])
        assert rc == 0
        lines = (out / "entropy.csv").read_text().splitlines()
        assert lines[0] == "batch,teacher_entropy"
        assert len(lines) == 3  # header + 2 batches

    def test_temp_experiment(self, tmp_path, teacher_dir):
        cfg = write_config(tmp_path)
        out = tmp_path / "temp"
        rc = main(["temp-experiment", "--config", cfg,
                   "--set", f"teacher.checkpoint={teacher_dir / 'teacher.ckpt'}",
                   "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        strategies = {r["strategy"] for r in report["results"]}
        assert strategies == {"step_increase", "constant", "step_decrease", "ita"}


class TestPlot:
    def test_three_rows_three_points(self, tmp_path):
        metrics = tmp_path / "metrics.csv"
        header = ("epoch,batch,tau_tilde,lambda,loss_cls,loss_adv,loss_gen,"
                  "loss_kd,teacher_entropy,student_lr")
        rows = [f"{e},0,{2.0 + e},0.3,1.0,-0.5,0.55,,2.1,0.05" for e in range(3)]
        metrics.write_text(header + "\n" + "\n".join(rows) + "\n")
        out = tmp_path / "tau.svg"
        rc = main(["plot", str(metrics), "tau", "--out", str(out)])
        assert rc == 0
        svg = out.read_text()
        pts = re.search(r'<polyline points="([^"]+)"', svg).group(1).split()
        assert len(pts) == 3
        assert "data-series" in svg

    def test_unknown_kind_rejected(self, tmp_path):
        metrics = tmp_path / "m.csv"
        metrics.write_text("epoch\n1\n")
        assert main(["plot", str(metrics), "tau", "--out", str(tmp_path / "x.svg")]) == 1
