from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import DTypeLike

from bninvert.core.errors import InvalidModelError, ShapeError
from bninvert.core.interfaces import Layer
from bninvert.core.ops import conv_output_size
from bninvert.core.sampling import derive_seed, randn
from bninvert.core.tensor import Tensor, default_dtype
from bninvert.nn.layers import (
    BatchNorm,
    BNLayerState,
    Conv2d,
    ForwardContext,
    ForwardMode,
    GlobalAvgPool,
    Linear,
    MaxPool,
    Moments,
    ReLU,
    Residual,
)
from bninvert.nn.specs import (
    BatchNormSpec,
    ConvSpec,
    GlobalAvgPoolSpec,
    LayerSpec,
    LinearSpec,
    MaxPoolSpec,
    ReLUSpec,
    ResidualSpec,
)

ImageShape = Tuple[int, int, int]


@dataclass
class Model:
    layers: List[Layer]
    input_shape: ImageShape
    class_count: int

    def bn_layers(self) -> List[BatchNorm]:
        found: List[BatchNorm] = []

        def walk(layers: Sequence[Layer]) -> None:
            for layer in layers:
                if isinstance(layer, BatchNorm):
                    found.append(layer)
                elif isinstance(layer, Residual):
                    walk(layer.body)

        walk(self.layers)
        return found

    @property
    def num_bn_layers(self) -> int:
        return len(self.bn_layers())

    @property
    def dtype(self) -> np.dtype:
        params = self.parameters()
        return params[0].dtype if params else default_dtype()

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    @contextmanager
    def frozen(self) -> Iterator["Model"]:
        """Detach every parameter from gradient tracking for the duration."""
        params = self.parameters()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, flag in zip(params, flags):
                p.requires_grad = flag


@dataclass(frozen=True)
class BNLayerStats:
    mean: np.ndarray
    var: np.ndarray


@dataclass(frozen=True)
class BNStatsSnapshot:
    """Running statistics of every BN layer, in forward order; arrays are read-only copies."""

    layers: Tuple[BNLayerStats, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, index: int) -> BNLayerStats:
        return self.layers[index]


@dataclass
class ForwardResult:
    logits: Tensor
    bn_batch_stats: List[Moments]


def _he_normal(shape: Tuple[int, ...], fan_in: int, seed: int, dtype: np.dtype) -> Tensor:
    return randn(shape, 0.0, float(np.sqrt(2.0 / fan_in)), seed=seed, requires_grad=True, dtype=dtype)


def _build_layers(
    specs: Sequence[LayerSpec],
    shape: Tuple[int, ...],
    seed: int,
    dtype: np.dtype,
    path: str,
) -> Tuple[List[Layer], Tuple[int, ...]]:
    layers: List[Layer] = []
    for index, spec in enumerate(specs):
        where = f"{path}{index}"
        if isinstance(spec, ConvSpec):
            if len(shape) != 3:
                raise ShapeError(f"Conv at layer {where} needs a [C, H, W] input, got {shape}")
            cin, h, w = shape
            fan_in = cin * spec.kernel * spec.kernel
            weight = _he_normal(
                (spec.out_channels, cin, spec.kernel, spec.kernel), fan_in, derive_seed(seed, where, "weight"), dtype
            )
            bias = Tensor(np.zeros(spec.out_channels), requires_grad=True, dtype=dtype)
            layers.append(Conv2d(weight, bias, stride=spec.stride, padding=spec.padding))
            shape = (
                spec.out_channels,
                conv_output_size(h, spec.kernel, spec.stride, spec.padding),
                conv_output_size(w, spec.kernel, spec.stride, spec.padding),
            )
        elif isinstance(spec, LinearSpec):
            if len(shape) != 1:
                raise ShapeError(f"Linear at layer {where} needs a flat input, got {shape}; add GlobalAvgPool first")
            weight = _he_normal((spec.out_features, shape[0]), shape[0], derive_seed(seed, where, "weight"), dtype)
            bias = Tensor(np.zeros(spec.out_features), requires_grad=True, dtype=dtype)
            layers.append(Linear(weight, bias))
            shape = (spec.out_features,)
        elif isinstance(spec, BatchNormSpec):
            layers.append(BatchNorm(BNLayerState.fresh(shape[0], dtype)))
        elif isinstance(spec, ReLUSpec):
            layers.append(ReLU())
        elif isinstance(spec, MaxPoolSpec):
            if len(shape) != 3 or shape[1] % spec.size or shape[2] % spec.size:
                raise ShapeError(f"MaxPool({spec.size}) at layer {where} does not tile input {shape}")
            layers.append(MaxPool(spec.size))
            shape = (shape[0], shape[1] // spec.size, shape[2] // spec.size)
        elif isinstance(spec, GlobalAvgPoolSpec):
            if len(shape) != 3:
                raise ShapeError(f"GlobalAvgPool at layer {where} needs [C, H, W], got {shape}")
            layers.append(GlobalAvgPool())
            shape = (shape[0],)
        elif isinstance(spec, ResidualSpec):
            body, body_shape = _build_layers(spec.body, shape, seed, dtype, f"{where}.")
            if body_shape != shape:
                raise ShapeError(f"Residual body at layer {where} maps {shape} -> {body_shape}")
            layers.append(Residual(body))
        else:
            raise InvalidModelError(f"Unknown layer spec: {spec!r}")
    return layers, shape


def build_model(
    specs: Sequence[LayerSpec],
    input_shape: ImageShape,
    seed: int = 0,
    dtype: Optional[DTypeLike] = None,
) -> Model:
    """Instantiate ``specs`` with He-normal conv/linear weights, zero biases and fresh BN state."""
    resolved = np.dtype(dtype) if dtype is not None else default_dtype()
    layers, out_shape = _build_layers(specs, tuple(input_shape), seed, resolved, "")
    if len(out_shape) != 1:
        raise ShapeError(f"Model must end in a flat [classes] output, got {out_shape}")
    return Model(layers=layers, input_shape=tuple(input_shape), class_count=out_shape[0])


def model_forward(model: Model, x: Tensor, mode: ForwardMode = ForwardMode.EVAL) -> ForwardResult:
    if x.ndim != 4 or x.shape[1:] != tuple(model.input_shape):
        raise ShapeError(f"Model expects input [N, {', '.join(map(str, model.input_shape))}], got {x.shape}")
    ctx = ForwardContext(mode=mode)
    y = x
    for layer in model.layers:
        y = layer.forward(y, ctx)
    if y.ndim != 2 or y.shape[1] != model.class_count:
        raise ShapeError(f"Model produced logits of shape {y.shape}, expected [N, {model.class_count}]")
    return ForwardResult(logits=y, bn_batch_stats=ctx.bn_stats)


def record_bn_stats(model: Model) -> BNStatsSnapshot:
    bns = model.bn_layers()
    if not bns:
        raise InvalidModelError("Model has no BatchNorm layers to record statistics from")
    layers = []
    for bn in bns:
        mean = bn.state.running_mean.copy()
        var = bn.state.running_var.copy()
        mean.setflags(write=False)
        var.setflags(write=False)
        layers.append(BNLayerStats(mean=mean, var=var))
    return BNStatsSnapshot(layers=tuple(layers))
