"""Update rules: Adam for synthetic inputs, plain SGD with cosine annealing for training."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from bninvert.core.errors import InvalidArgumentError, InvalidStateError
from bninvert.core.tensor import Tensor


@dataclass
class AdamState:
    params: List[Tensor]
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidArgumentError(f"Adam betas must be in (0, 1), got ({self.beta1}, {self.beta2})")
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    @classmethod
    def create(cls, params: Sequence[Tensor], lr: float = 0.1, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(params=list(params), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def _check_registered(registered: Sequence[Tensor], params: Sequence[Tensor]) -> None:
    if len(params) != len(registered) or any(p is not r for p, r in zip(params, registered)):
        raise InvalidStateError("Optimizer called with tensors other than its registered parameter list")


def _grad_of(p: Tensor, index: int) -> np.ndarray:
    if p.grad is None:
        raise InvalidStateError(f"Parameter {p.name or index} has no gradient buffer")
    return p.grad


def adam_step(state: AdamState, params: Sequence[Tensor]) -> List[Tensor]:
    """One bias-corrected Adam update, in place."""
    _check_registered(state.params, params)
    grads = [_grad_of(p, i) for i, p in enumerate(params)]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return list(params)


def sgd_step(params: Sequence[Tensor], lr: float) -> List[Tensor]:
    if lr < 0:
        raise InvalidArgumentError(f"SGD learning rate must be non-negative, got {lr}")
    for i, p in enumerate(params):
        g = _grad_of(p, i)
        if lr:
            p.data -= (lr * g).astype(p.dtype)
    return list(params)


@dataclass(frozen=True)
class CosineSchedule:
    eta_max: float
    eta_min: float = 0.0
    total_steps: int = 1

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise InvalidArgumentError(f"CosineSchedule needs total_steps >= 1, got {self.total_steps}")
        if self.eta_min > self.eta_max:
            raise InvalidArgumentError(f"eta_min ({self.eta_min}) exceeds eta_max ({self.eta_max})")


def cosine_lr(schedule: CosineSchedule, t: int) -> float:
    t = min(max(t, 0), schedule.total_steps)
    span = schedule.eta_max - schedule.eta_min
    return schedule.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * t / schedule.total_steps))
