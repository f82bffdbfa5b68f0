import numpy as np
import pytest

from advdistill import (AttackConfig, ConvClassifier, InputError, craft_training_adversarial,
                        distillation_loss, fgsm, pgd)
from advdistill import tensor as T
from advdistill.layers import Linear, Network
from advdistill.models import softmax_with_temperature
from advdistill.tensor import Tensor

rng = np.random.default_rng(5)
EPS = 8 / 255


class FlatLinearModel(Network):
    """Single affine layer on flattened inputs; analytic CE gradient."""

    def __init__(self, in_dim, num_classes, seed=0):
        super().__init__()
        r = np.random.default_rng(seed)
        self.lin = self.register("lin", Linear(in_dim, num_classes, rng=r))
        self.num_classes = num_classes

    def forward(self, x, training=False):
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
        flat = T.reshape(t, (t.data.shape[0], -1))
        return self.lin(flat)


def tiny_classifier(seed=0, zero=False):
    m = ConvClassifier(4, 1, (2, 3, 4), seed=seed)
    if zero:
        for p in m.parameters():
            p.data[...] = 0.0
    return m


def rand_images(n=4, ch=1, size=8):
    return rng.uniform(0, 1, (n, ch, size, size)).astype(np.float32)


class TestAttackConfig:
    def test_validation(self):
        with pytest.raises(InputError):
            AttackConfig(steps=0)
        with pytest.raises(InputError):
            AttackConfig(epsilon=-0.1, step_size=0.0)
        with pytest.raises(InputError):
            AttackConfig(epsilon=0.01, step_size=0.02)
        with pytest.raises(InputError):
            AttackConfig(loss_kind="nope")

    def test_round_trip(self):
        cfg = AttackConfig(loss_kind="cw_margin", steps=20)
        assert AttackConfig.from_dict(cfg.to_dict()) == cfg


class TestFgsm:
    def test_zero_gradient_returns_input(self):
        model = tiny_classifier(zero=True)  # constant logits -> zero input grad
        x = rand_images()
        out = fgsm(model, x, np.array([0, 1, 2, 3]), EPS)
        np.testing.assert_array_equal(out, x)

    def test_ball_and_box(self):
        model = tiny_classifier(seed=1)
        x = rand_images()
        out = fgsm(model, x, np.array([0, 1, 2, 3]), EPS)
        assert np.abs(out - x).max() <= EPS + 1e-7
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_matches_analytic_linear_gradient(self):
        model = FlatLinearModel(16, 3, seed=2)
        x = rng.uniform(0.2, 0.8, (5, 1, 4, 4)).astype(np.float32)
        y = np.array([0, 1, 2, 0, 1])
        # d(mean CE)/dx = (softmax(xW+b) - onehot) W^T / n
        flat = x.reshape(5, 16)
        logits = flat @ model.lin.weight.data + model.lin.bias.data
        probs = softmax_with_temperature(logits, 1.0)
        onehot = np.zeros_like(probs)
        onehot[np.arange(5), y] = 1.0
        grad = ((probs - onehot) @ model.lin.weight.data.T / 5).reshape(x.shape)
        expected = np.clip(x + np.float32(EPS) * np.sign(grad.astype(np.float32)), 0, 1)
        out = fgsm(model, x, y, EPS)
        np.testing.assert_allclose(out, expected, atol=2e-7)


class TestPgd:
    def test_degenerate_config_equals_fgsm_bitwise(self):
        model = tiny_classifier(seed=3)
        x = rand_images()
        y = np.array([0, 1, 2, 3])
        cfg = AttackConfig(epsilon=EPS, step_size=EPS, steps=1, random_start_radius=0.0,
                           loss_kind="cross_entropy")
        assert np.array_equal(pgd(model, x, cfg, labels=y), fgsm(model, x, y, EPS))

    @pytest.mark.parametrize("kind", ["cross_entropy", "kl_vs_clean", "cw_margin"])
    def test_ball_and_box_all_kinds(self, kind):
        model = tiny_classifier(seed=4)
        x = rand_images()
        y = np.array([0, 1, 2, 3])
        cfg = AttackConfig(epsilon=EPS, step_size=2 / 255, steps=5,
                           random_start_radius=EPS, loss_kind=kind)
        out = pgd(model, x, cfg, rng=np.random.default_rng(0), labels=y)
        assert np.abs(out - x).max() <= EPS + 1e-6
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_deterministic_for_fixed_seed(self):
        model = tiny_classifier(seed=6)
        x = rand_images()
        y = np.array([0, 1, 2, 3])
        cfg = AttackConfig(epsilon=EPS, step_size=2 / 255, steps=4, random_start_radius=EPS,
                           loss_kind="cross_entropy")
        a = pgd(model, x, cfg, rng=np.random.default_rng(9), labels=y)
        b = pgd(model, x, cfg, rng=np.random.default_rng(9), labels=y)
        assert np.array_equal(a, b)

    def test_random_start_requires_rng(self):
        model = tiny_classifier()
        cfg = AttackConfig(epsilon=EPS, step_size=2 / 255, steps=1, random_start_radius=EPS)
        with pytest.raises(InputError, match="rng"):
            pgd(model, rand_images(), cfg, labels=np.array([0, 1, 2, 3]))

    def test_missing_targets_rejected(self):
        model = tiny_classifier()
        cfg = AttackConfig(loss_kind="cross_entropy", random_start_radius=0.0)
        with pytest.raises(InputError, match="labels"):
            pgd(model, rand_images(), cfg)

    def test_objective_ascends_for_most_samples(self):
        # per-sample CE at the PGD point should beat the starting point
        model = tiny_classifier(seed=7)
        x = rand_images(n=32)
        y = rng.integers(0, 4, 32)
        cfg = AttackConfig(epsilon=EPS, step_size=2 / 255, steps=10, random_start_radius=0.0,
                           loss_kind="cross_entropy")
        out = pgd(model, x, cfg, labels=y)

        def per_sample_ce(images):
            with T.no_grad():
                logits = model.forward(images, training=False).data
            logp = np.log(softmax_with_temperature(logits, 1.0) + 1e-12)
            return -logp[np.arange(len(y)), y]

        frac = float(np.mean(per_sample_ce(out) >= per_sample_ce(x) - 1e-7))
        assert frac >= 0.95


class TestTrainingAttack:
    def test_epsilon_zero_identity(self):
        student = tiny_classifier(seed=8)
        teacher = tiny_classifier(seed=9)
        x = rand_images()
        cfg = AttackConfig(epsilon=0.0, step_size=0.0, steps=10, random_start_radius=0.001)
        out = craft_training_adversarial(student, teacher, x, cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(out, x)

    def test_attack_does_not_decrease_its_objective(self):
        teacher = tiny_classifier(seed=10)
        student = tiny_classifier(seed=10)  # identical copy
        x = rand_images(n=16)
        cfg = AttackConfig(epsilon=EPS, step_size=2 / 255, steps=10,
                           random_start_radius=0.001, loss_kind="kd_vs_teacher")
        adv = craft_training_adversarial(student, teacher, x, cfg, np.random.default_rng(1))
        kd_clean = distillation_loss(teacher.forward(x), student.forward(x), 1.0).scalar
        kd_adv = distillation_loss(teacher.forward(x), student.forward(adv), 1.0).scalar
        assert kd_clean == pytest.approx(0.0, abs=1e-9)  # identical nets on clean data
        assert kd_adv >= kd_clean - 1e-9

    def test_zero_gradient_leaves_only_random_start(self):
        student = tiny_classifier(zero=True)
        teacher = tiny_classifier(seed=11)
        x = rand_images()
        cfg = AttackConfig(epsilon=EPS, step_size=2 / 255, steps=10, random_start_radius=0.001)
        out = craft_training_adversarial(student, teacher, x, cfg, np.random.default_rng(2))
        assert np.abs(out - x).max() <= 0.001 + 1e-7


def test_param_gradients_untouched_by_attacks():
    model = tiny_classifier(seed=12)
    x = rand_images()
    y = np.array([0, 1, 2, 3])
    cfg = AttackConfig(epsilon=EPS, step_size=2 / 255, steps=3, random_start_radius=0.0)
    pgd(model, x, cfg, labels=y)
    assert all(p.grad is None for p in model.parameters())
    assert all(p.requires_grad for p in model.parameters())
