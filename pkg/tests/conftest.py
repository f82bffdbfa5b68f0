import os

import numpy as np
import pytest

from advdistill import (ConvClassifier, PretrainConfig, SyntheticSpec, make_synthetic_dataset,
                        pretrain_robust_teacher)
from advdistill.checkpoints import load_model, save_model

DESK_SPEC = SyntheticSpec(num_classes=10, train_per_class=150, test_per_class=50)
DESK_SEED = 2024
TEACHER_WIDTHS = (8, 16, 32)
STUDENT_WIDTHS = (4, 8, 16)
STEM_STRIDE = 2


def finite_difference(loss_fn, params, h=1e-6, stride=1):
    """Central finite differences of a scalar loss over parameter tensors.

    ``stride`` subsamples coordinates for speed; returns (grads, fd) pairs of
    flat arrays restricted to the sampled coordinates.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    sampled_g, sampled_fd = [], []
    for pi, p in enumerate(params):
        flat = p.data.ravel()
        assert flat.base is not None or flat is p.data, "parameter must be contiguous"
        for i in range(0, flat.size, stride):
            old = flat[i]
            flat[i] = old + h
            lp = float(loss_fn().data)
            flat[i] = old - h
            lm = float(loss_fn().data)
            flat[i] = old
            sampled_fd.append((lp - lm) / (2 * h))
            sampled_g.append(grads[pi].ravel()[i])
    return np.array(sampled_g), np.array(sampled_fd)


def max_rel_error(g, fd, floor=1e-6):
    scale = np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return float(np.max(np.abs(g - fd) / scale))


@pytest.fixture(scope="session")
def desk_data():
    return make_synthetic_dataset(DESK_SPEC, seed=7)


@pytest.fixture(scope="session")
def desk_teacher(desk_data, tmp_path_factory):
    """PGD-AT teacher for the desk task; cached on disk when enabled."""
    cache_dir = os.environ.get("ADVDISTILL_TEST_CACHE_DIR", "")
    cache = os.path.join(cache_dir, "desk_teacher.ckpt") if cache_dir else ""
    if cache and os.path.exists(cache):
        model, meta = load_model(cache)
        return model.freeze(), meta
    train_set, test_set = desk_data
    teacher = ConvClassifier(DESK_SPEC.num_classes, DESK_SPEC.channels, TEACHER_WIDTHS,
                             stem_stride=STEM_STRIDE, seed=DESK_SEED)
    report = pretrain_robust_teacher(teacher, train_set, test_set,
                                     PretrainConfig(epochs=12, batch_size=64, lr=0.05,
                                                    seed=DESK_SEED))
    if cache:
        os.makedirs(cache_dir, exist_ok=True)
        save_model(teacher, cache, metadata=report)
    return teacher.freeze(), report
