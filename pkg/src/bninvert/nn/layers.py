from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from bninvert.core import ops
from bninvert.core.errors import InvalidArgumentError, ShapeError
from bninvert.core.interfaces import Layer
from bninvert.core.tensor import Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5

Moments = Tuple[Tensor, Tensor]


class ForwardMode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"
    SYNTH_EVAL = "synth_eval"


@dataclass
class ForwardContext:
    mode: ForwardMode
    bn_stats: List[Moments] = field(default_factory=list)


@dataclass
class BNLayerState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    def __post_init__(self) -> None:
        if not 0 < self.momentum < 1:
            raise InvalidArgumentError(f"BN momentum must be in (0, 1), got {self.momentum}")
        if not self.eps > 0:
            raise InvalidArgumentError(f"BN eps must be positive, got {self.eps}")
        if np.any(self.running_var < 0):
            raise InvalidArgumentError("BN running_var must be non-negative")

    @property
    def channels(self) -> int:
        return int(self.gamma.shape[0])

    @classmethod
    def fresh(cls, channels: int, dtype: np.dtype) -> "BNLayerState":
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, dtype=dtype),
            beta=Tensor(np.zeros(channels), requires_grad=True, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def bn_forward(x: Tensor, state: BNLayerState, mode: ForwardMode) -> Tuple[Tensor, Optional[Moments]]:
    """Normalize ``x[N, C, ...]``; SYNTH_EVAL also returns the batch moments of ``x``."""
    if x.ndim < 2 or x.shape[1] != state.channels:
        raise ShapeError(f"BatchNorm expects {state.channels} channels, got input shape {x.shape}")
    bshape = (1, state.channels) + (1,) * (x.ndim - 2)
    gamma = ops.reshape(state.gamma, bshape)
    beta = ops.reshape(state.beta, bshape)

    if mode is ForwardMode.TRAIN:
        mean, var = ops.batch_moments(x)
        x_hat = (x - ops.reshape(mean, bshape)) / ops.sqrt(ops.reshape(var, bshape) + state.eps)
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean.data).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var.data).astype(state.running_var.dtype)
        return x_hat * gamma + beta, None

    inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
    shift = Tensor(state.running_mean.reshape(bshape), dtype=x.dtype)
    scale = Tensor(inv_std.reshape(bshape), dtype=x.dtype)
    y = (x - shift) * scale * gamma + beta
    if mode is ForwardMode.SYNTH_EVAL:
        return y, ops.batch_moments(x)
    return y, None


class Conv2d:
    kind = "conv"

    def __init__(self, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> None:
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.padding = padding

    @property
    def out_channels(self) -> int:
        return int(self.weight.shape[0])

    @property
    def in_channels(self) -> int:
        return int(self.weight.shape[1])

    @property
    def kernel(self) -> int:
        return int(self.weight.shape[2])

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]


class Linear:
    kind = "linear"

    def __init__(self, weight: Tensor, bias: Tensor) -> None:
        self.weight = weight
        self.bias = bias

    @property
    def out_features(self) -> int:
        return int(self.weight.shape[0])

    @property
    def in_features(self) -> int:
        return int(self.weight.shape[1])

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        if x.ndim != 2:
            raise ShapeError(f"Linear expects [N, F] input, got {x.shape}")
        return ops.matmul(x, ops.transpose(self.weight)) + self.bias

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]


class BatchNorm:
    kind = "bn"

    def __init__(self, state: BNLayerState) -> None:
        self.state = state

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        y, moments = bn_forward(x, self.state, ctx.mode)
        if moments is not None:
            ctx.bn_stats.append(moments)
        return y

    def parameters(self) -> List[Tensor]:
        return [self.state.gamma, self.state.beta]


class ReLU:
    kind = "relu"

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        return ops.relu(x)

    def parameters(self) -> List[Tensor]:
        return []


class MaxPool:
    kind = "maxpool"

    def __init__(self, size: int) -> None:
        self.size = size

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        return ops.max_pool2d(x, self.size)

    def parameters(self) -> List[Tensor]:
        return []


class GlobalAvgPool:
    kind = "gap"

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        if x.ndim != 4:
            raise ShapeError(f"GlobalAvgPool expects [N, C, H, W], got {x.shape}")
        return ops.mean(x, axis=(2, 3))

    def parameters(self) -> List[Tensor]:
        return []


class Residual:
    kind = "residual"

    def __init__(self, body: List[Layer]) -> None:
        self.body = body

    def forward(self, x: Tensor, ctx: ForwardContext) -> Tensor:
        y = x
        for layer in self.body:
            y = layer.forward(y, ctx)
        if y.shape != x.shape:
            raise ShapeError(f"Residual body changed shape {x.shape} -> {y.shape}")
        return x + y

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.body for p in layer.parameters()]
