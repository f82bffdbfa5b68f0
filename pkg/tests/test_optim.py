import numpy as np
import pytest

from advdistill import Adam, SGD, cosine_lr
from advdistill.tensor import Tensor


def make_param(values):
    p = Tensor(np.asarray(values, dtype=np.float32), requires_grad=True)
    return p


class TestCosine:
    def test_endpoints(self):
        assert cosine_lr(0.05, 0, 200) == 0.05
        assert abs(cosine_lr(0.05, 200, 200)) < 1e-9

    def test_midpoint_and_monotone(self):
        assert cosine_lr(0.1, 100, 200) == pytest.approx(0.05)
        vals = [cosine_lr(0.05, e, 50) for e in range(51)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestSGD:
    def test_hand_step_with_momentum_and_decay(self):
        p = make_param([1.0, -2.0])
        opt = SGD([p], lr=0.1, momentum=0.9, weight_decay=0.01)
        p.grad = np.array([0.5, 0.5], dtype=np.float32)
        opt.step()
        # v = g + wd*p = [0.51, 0.48]; p -= 0.1*v
        np.testing.assert_allclose(p.data, [1.0 - 0.051, -2.0 - 0.048], rtol=1e-6)
        p.grad = np.array([0.0, 0.0], dtype=np.float32)
        opt.step()
        # v = 0.9*v + wd*p
        v = 0.9 * np.array([0.51, 0.48]) + 0.01 * np.array([0.949, -2.048])
        np.testing.assert_allclose(p.data, np.array([0.949, -2.048]) - 0.1 * v, rtol=1e-5)

    def test_none_grad_skipped(self):
        p = make_param([3.0])
        opt = SGD([p], lr=0.1, momentum=0.9)
        opt.step()
        np.testing.assert_array_equal(p.data, [3.0])

    def test_state_round_trip(self):
        p = make_param([1.0])
        opt = SGD([p], lr=0.1, momentum=0.9)
        p.grad = np.array([1.0], dtype=np.float32)
        opt.step()
        state = opt.state_dict()
        p2 = make_param([1.0])
        opt2 = SGD([p2], lr=0.1, momentum=0.9)
        opt2.load_state_dict(state)
        np.testing.assert_array_equal(opt2.velocity[0], opt.velocity[0])


class TestAdam:
    def test_first_step_is_lr_sized(self):
        p = make_param([0.0])
        opt = Adam([p], lr=1e-3, betas=(0.5, 0.999))
        p.grad = np.array([0.3], dtype=np.float32)
        opt.step()
        # bias-corrected first step moves by ~lr * sign(g)
        assert p.data[0] == pytest.approx(-1e-3, rel=1e-3)

    def test_matches_reference_two_steps(self):
        p = make_param([1.0])
        opt = Adam([p], lr=0.01, betas=(0.5, 0.999), eps=1e-8)
        ref = 1.0
        m = v = 0.0
        for t, g in enumerate([0.2, -0.4], start=1):
            p.grad = np.array([g], dtype=np.float32)
            opt.step()
            m = 0.5 * m + 0.5 * g
            v = 0.999 * v + 0.001 * g * g
            mhat = m / (1 - 0.5 ** t)
            vhat = v / (1 - 0.999 ** t)
            ref -= 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
            assert p.data[0] == pytest.approx(ref, rel=1e-5)

    def test_state_round_trip(self):
        p = make_param([1.0, 2.0])
        opt = Adam([p], lr=0.01)
        p.grad = np.array([0.1, -0.1], dtype=np.float32)
        opt.step()
        state = opt.state_dict()
        p2 = make_param([1.0, 2.0])
        opt2 = Adam([p2], lr=0.01)
        opt2.load_state_dict(state)
        assert opt2.t == 1
        np.testing.assert_array_equal(opt2.m[0], opt.m[0])
        np.testing.assert_array_equal(opt2.v[0], opt.v[0])
