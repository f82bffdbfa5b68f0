import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advdistill import (ConfidenceStats, InputError, adaptive_lambda, confidence_stats,
                        interactive_temperature)


def stats_from(con_t, con_s, c):
    con_t = np.asarray(con_t, dtype=np.float64)
    con_s = np.asarray(con_s, dtype=np.float64)
    return ConfidenceStats(con_t, con_s, np.zeros(con_t.shape[0], dtype=np.int64), c)


class TestConfidenceStats:
    def test_hand_softmax(self):
        # e^5 / (e^5 + 2) = 0.98670
        stats = confidence_stats(np.array([[5.0, 0.0, 0.0]]), np.zeros((1, 3)))
        assert stats.teacher_class[0] == 0
        assert stats.teacher_confidence[0] == pytest.approx(0.9867, abs=1e-4)
        assert stats.student_confidence[0] == pytest.approx(1 / 3, abs=1e-9)

    def test_uniform_ties_break_low(self):
        stats = confidence_stats(np.zeros((4, 5)), np.zeros((4, 5)))
        assert (stats.teacher_class == 0).all()
        np.testing.assert_allclose(stats.teacher_confidence, 0.2, atol=1e-12)

    def test_identical_models_match_elementwise(self):
        logits = np.random.default_rng(0).uniform(-3, 3, (8, 6))
        stats = confidence_stats(logits, logits.copy())
        np.testing.assert_array_equal(stats.teacher_confidence, stats.student_confidence)

    def test_empty_batch_rejected(self):
        with pytest.raises(InputError):
            confidence_stats(np.zeros((0, 3)), np.zeros((0, 3)))


class TestInteractiveTemperature:
    def test_equal_confidences_floor_exact(self):
        stats = stats_from([0.5, 0.8], [0.5, 0.8], 10)
        assert interactive_temperature(stats) == 1.0

    def test_direct_evaluation(self):
        stats = stats_from([0.9, 0.75], [0.55, 0.40], 10)  # gaps all 0.35
        assert interactive_temperature(stats) == pytest.approx(3.5, abs=1e-12)

    def test_floor_engages(self):
        stats = stats_from([0.5], [0.45], 10)  # mean gap 0.05 -> 0.5 -> floor
        assert interactive_temperature(stats) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 20), st.integers(1, 64), st.integers(0, 10 ** 6))
    def test_bounds(self, c, n, seed):
        r = np.random.default_rng(seed)
        stats = stats_from(r.uniform(1 / c, 1, n), r.uniform(0, 1, n), c)
        tau = interactive_temperature(stats)
        assert 1.0 <= tau <= c

    def test_monotone_in_gap(self):
        c = 10
        base = stats_from([0.6] * 4, [0.5] * 4, c)
        wider = stats_from([0.8] * 4, [0.4] * 4, c)
        assert interactive_temperature(wider) >= interactive_temperature(base)


class TestAdaptiveLambda:
    def test_uniform_teacher_exactly_one(self):
        for c in (2, 7, 8, 10):
            logits = np.zeros((6, c))
            stats = confidence_stats(logits, logits)
            assert adaptive_lambda(stats) == 1.0

    def test_confident_teacher(self):
        stats = stats_from([1.0] * 5, [0.5] * 5, 10)
        assert adaptive_lambda(stats) == pytest.approx(0.1, abs=1e-12)

    def test_direct_evaluation(self):
        stats = stats_from([0.5] * 4, [0.5] * 4, 10)
        assert adaptive_lambda(stats) == pytest.approx(0.2, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 20), st.integers(1, 64), st.integers(0, 10 ** 6))
    def test_bounds(self, c, n, seed):
        r = np.random.default_rng(seed)
        stats = stats_from(r.uniform(1 / c, 1, n), r.uniform(0, 1, n), c)
        lam = adaptive_lambda(stats)
        assert 0.0 < lam <= 1.0

    def test_strictly_decreasing_in_confidence(self):
        c = 10
        lams = [adaptive_lambda(stats_from([m] * 4, [0.3] * 4, c))
                for m in (0.2, 0.4, 0.6, 0.8, 1.0)]
        assert all(a > b for a, b in zip(lams, lams[1:]))
