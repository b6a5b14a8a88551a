"""Shared fixtures: small deterministic datasets and a finite-difference helper."""

from __future__ import annotations

import numpy as np
import pytest

from deconf.datagen import GenConfig, generate
from deconf.training import TrainConfig


TINY_GEN = GenConfig(
    n_train_subjects=3,
    n_ood_subjects=2,
    samples_per_subject=12,
    seq_lens=(3, 2, 2),
    dims=(4, 3, 3),
    n_classes=3,
    seed=7,
)

TINY_TRAIN = TrainConfig(
    epochs=2,
    batch_size=16,
    seed=0,
    d_enc=4,
    d_fused=6,
    d_g=5,
    d_h=5,
    d_n=6,
)


@pytest.fixture(scope="session")
def tiny_bundle():
    return generate(TINY_GEN)


@pytest.fixture()
def tiny_train_config():
    return TINY_TRAIN


def central_difference(loss_fn, arr: np.ndarray, index, eps: float = 1e-5) -> float:
    """Two-sided finite difference of a scalar loss with respect to arr[index]."""
    old = arr[index]
    arr[index] = old + eps
    plus = loss_fn()
    arr[index] = old - eps
    minus = loss_fn()
    arr[index] = old
    return (plus - minus) / (2.0 * eps)


def max_relative_grad_error(loss_fn, params: dict, analytic: dict, max_entries: int = 12) -> float:
    """Worst relative error between analytic gradients and central differences.

    Checks up to max_entries coordinates per parameter to keep runtime bounded;
    coordinates are visited in C order, which exercises every row of the small
    matrices used in the tests.
    """
    worst = 0.0
    for name, arr in params.items():
        grad = analytic[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in range(min(arr.size, max_entries)):
            index = it.multi_index
            fd = central_difference(loss_fn, arr, index)
            num = abs(fd - grad[index])
            den = max(1e-8, abs(fd), abs(grad[index]))
            worst = max(worst, num / den)
            it.iternext()
    return worst
