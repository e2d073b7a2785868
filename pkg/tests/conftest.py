from __future__ import annotations

import logging
from typing import Callable, List, Sequence

import numpy as np
import pytest

from bninvert.components.fixture.shapes import ShapesFixture, ShapesFixtureConfig
from bninvert.core.tensor import Tensor, precision
from bninvert.nn.model import Model, build_model
from bninvert.nn.specs import tiny_resnet_specs

GradCheck = Callable[..., None]


def _numeric_grad(build: Callable[..., Tensor], arrays: List[np.ndarray], which: int, eps: float) -> np.ndarray:
    target = arrays[which]
    grad = np.zeros_like(target)
    for idx in np.ndindex(target.shape):
        saved = target[idx]
        target[idx] = saved + eps
        plus = build(*[Tensor(a) for a in arrays]).item()
        target[idx] = saved - eps
        minus = build(*[Tensor(a) for a in arrays]).item()
        target[idx] = saved
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


@pytest.fixture
def grad_check() -> GradCheck:
    """Central finite differences in float64 against the analytic backward pass."""

    def check(build: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-6, tol: float = 1e-4) -> None:
        with precision(np.float64):
            arrays = [np.array(a, dtype=np.float64) for a in inputs]
            tensors = [Tensor(a, requires_grad=True) for a in arrays]
            build(*tensors).backward()
            for which, tensor in enumerate(tensors):
                numeric = _numeric_grad(build, arrays, which, eps)
                analytic = tensor.grad
                scale = max(float(np.abs(numeric).max()), float(np.abs(analytic).max()), 1e-8)
                err = float(np.abs(analytic - numeric).max()) / scale
                assert err < tol, f"input {which}: relative error {err:.3g}"

    return check


@pytest.fixture(autouse=True)
def _detach_cli_log_handlers():
    """`bninvert` points the root logger at the current stderr; drop it once capture ends."""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if type(handler) is logging.StreamHandler:
            root.removeHandler(handler)


@pytest.fixture
def small_fixture_cfg() -> ShapesFixtureConfig:
    return ShapesFixtureConfig(class_count=4, image_size=8, train_per_class=12, test_per_class=6, seed=7)


@pytest.fixture
def small_dataset(small_fixture_cfg: ShapesFixtureConfig):
    return ShapesFixture(small_fixture_cfg).generate()


@pytest.fixture
def tiny_model() -> Model:
    return build_model(tiny_resnet_specs(4, width=4), (3, 8, 8), seed=3)
