import math

import numpy as np
import pytest

from bninvert.core import ops
from bninvert.core.errors import InvalidArgumentError, InvalidStateError
from bninvert.core.tensor import Tensor, precision
from bninvert.nn.optim import AdamState, CosineSchedule, adam_step, cosine_lr, sgd_step


def test_adam_first_step_moves_by_lr_against_gradient_sign() -> None:
    with precision(np.float64):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        state = AdamState.create([x], lr=0.1)
        x.grad[...] = [4.0, -0.5, 1e-3]
        adam_step(state, [x])
    np.testing.assert_allclose(x.data, [0.9, -1.9, 2.9], atol=1e-4)
    assert state.t == 1


def test_adam_minimizes_quadratic() -> None:
    with precision(np.float64):
        target = np.array([0.5, -1.5, 2.0])
        x = Tensor(np.zeros(3), requires_grad=True)
        state = AdamState.create([x], lr=0.1)
        for _ in range(500):
            x.zero_grad()
            ops.sum(ops.square(x - Tensor(target))).backward()
            adam_step(state, [x])
    np.testing.assert_allclose(x.data, target, atol=1e-2)


def test_adam_rejects_unregistered_params() -> None:
    x = Tensor(np.zeros(2), requires_grad=True)
    y = Tensor(np.zeros(2), requires_grad=True)
    state = AdamState.create([x])
    with pytest.raises(InvalidStateError):
        adam_step(state, [y])


def test_adam_needs_gradient_buffer() -> None:
    x = Tensor(np.zeros(2))
    state = AdamState.create([x])
    with pytest.raises(InvalidStateError):
        adam_step(state, [x])


def test_adam_rejects_bad_betas() -> None:
    with pytest.raises(InvalidArgumentError):
        AdamState.create([Tensor(np.zeros(1), requires_grad=True)], beta1=1.0)


def test_sgd_step() -> None:
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    x.grad[...] = [1.0, -1.0]
    sgd_step([x], 0.5)
    np.testing.assert_allclose(x.data, [0.5, 2.5])
    with pytest.raises(InvalidArgumentError):
        sgd_step([x], -0.1)


def test_cosine_schedule_endpoints_and_midpoint() -> None:
    schedule = CosineSchedule(eta_max=0.1, eta_min=0.0, total_steps=10)
    assert cosine_lr(schedule, 0) == pytest.approx(0.1)
    assert cosine_lr(schedule, 5) == pytest.approx(0.05)
    assert cosine_lr(schedule, 10) == pytest.approx(0.0)
    assert cosine_lr(schedule, 25) == pytest.approx(0.0)
    assert cosine_lr(schedule, -3) == pytest.approx(0.1)


def test_cosine_schedule_is_monotone() -> None:
    schedule = CosineSchedule(eta_max=0.05, eta_min=0.001, total_steps=30)
    values = [cosine_lr(schedule, t) for t in range(31)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert values[7] == pytest.approx(0.001 + 0.5 * 0.049 * (1 + math.cos(math.pi * 7 / 30)))


def test_cosine_schedule_validates() -> None:
    with pytest.raises(InvalidArgumentError):
        CosineSchedule(eta_max=0.1, total_steps=0)
    with pytest.raises(InvalidArgumentError):
        CosineSchedule(eta_max=0.1, eta_min=0.2, total_steps=5)


def test_adam_zero_gradient_leaves_params_unchanged() -> None:
    with precision(np.float64):
        x = Tensor(np.array([0.3, -1.2, 4.0]), requires_grad=True)
        state = AdamState.create([x], lr=0.1)
        for _ in range(3):
            adam_step(state, [x])
    np.testing.assert_array_equal(x.data, [0.3, -1.2, 4.0])


def test_adam_first_step_direction_ignores_gradient_scale() -> None:
    start = np.array([1.0, -1.0, 0.5, 2.0])
    grad = np.array([0.2, -3.0, 0.05, -0.7])
    moved = []
    for scale in (1.0, 10.0):
        with precision(np.float64):
            x = Tensor(start.copy(), requires_grad=True)
            state = AdamState.create([x], lr=0.05)
            x.grad[...] = scale * grad
            adam_step(state, [x])
        moved.append(x.data - start)
    np.testing.assert_allclose(moved[0], moved[1], atol=1e-6)
    np.testing.assert_array_equal(np.sign(moved[0]), -np.sign(grad))
