"""Declarative layer specs; :func:`bninvert.nn.model.build_model` instantiates them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1


@dataclass(frozen=True)
class LinearSpec:
    out_features: int


@dataclass(frozen=True)
class BatchNormSpec:
    pass


@dataclass(frozen=True)
class ReLUSpec:
    pass


@dataclass(frozen=True)
class MaxPoolSpec:
    size: int = 2


@dataclass(frozen=True)
class GlobalAvgPoolSpec:
    pass


@dataclass(frozen=True)
class ResidualSpec:
    """``y = x + body(x)``; the body must preserve the input shape."""

    body: Tuple["LayerSpec", ...]


LayerSpec = Union[ConvSpec, LinearSpec, BatchNormSpec, ReLUSpec, MaxPoolSpec, GlobalAvgPoolSpec, ResidualSpec]


def tiny_resnet_specs(class_count: int, width: int = 16) -> Tuple[LayerSpec, ...]:
    """Six-BN residual CNN: stem, two residual blocks, pre-head BN, GAP, linear."""

    def block() -> ResidualSpec:
        return ResidualSpec(
            body=(
                ConvSpec(width),
                BatchNormSpec(),
                ReLUSpec(),
                ConvSpec(width),
                BatchNormSpec(),
            )
        )

    return (
        ConvSpec(width),
        BatchNormSpec(),
        ReLUSpec(),
        block(),
        ReLUSpec(),
        MaxPoolSpec(2),
        block(),
        ReLUSpec(),
        BatchNormSpec(),
        GlobalAvgPoolSpec(),
        LinearSpec(class_count),
    )
