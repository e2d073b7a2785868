"""Differentiable primitives.

Every function takes and returns :class:`Tensor`; plain numbers and arrays are
promoted to constants of the first tensor operand's dtype.
"""
from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import ArrayLike

from bninvert.core.errors import InvalidArgumentError, ShapeError
from bninvert.core.tensor import Tensor

Operand = Union[Tensor, float, int, np.ndarray]
Axis = Union[None, int, Tuple[int, ...]]


def _dtype_of(*xs: Operand) -> np.dtype:
    for x in xs:
        if isinstance(x, Tensor):
            return x.dtype
    return np.dtype(np.float32)


def _lift(x: Operand, dtype: np.dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


def _expand_reduced(grad: np.ndarray, axes: Tuple[int, ...], keepdims: bool, shape: Tuple[int, ...]) -> np.ndarray:
    if not keepdims:
        grad = np.expand_dims(grad, axes)
    return np.broadcast_to(grad, shape)


# -- elementwise -----------------------------------------------------------------------


def add(a: Operand, b: Operand) -> Tensor:
    dtype = _dtype_of(a, b)
    a, b = _lift(a, dtype), _lift(b, dtype)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, "add", (a, b), backward)


def sub(a: Operand, b: Operand) -> Tensor:
    dtype = _dtype_of(a, b)
    a, b = _lift(a, dtype), _lift(b, dtype)

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, "sub", (a, b), backward)


def mul(a: Operand, b: Operand) -> Tensor:
    dtype = _dtype_of(a, b)
    a, b = _lift(a, dtype), _lift(b, dtype)

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, "mul", (a, b), backward)


def div(a: Operand, b: Operand) -> Tensor:
    dtype = _dtype_of(a, b)
    a, b = _lift(a, dtype), _lift(b, dtype)

    def backward(g: np.ndarray):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(a.data / b.data, "div", (a, b), backward)


def neg(x: Tensor) -> Tensor:
    return Tensor.from_op(-x.data, "neg", (x,), lambda g: (-g,))


def square(x: Tensor) -> Tensor:
    return Tensor.from_op(x.data * x.data, "square", (x,), lambda g: (2 * x.data * g,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return Tensor.from_op(out, "sqrt", (x,), lambda g: (g * 0.5 / out,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0).astype(x.dtype), "relu", (x,), lambda g: (g * mask,))


# -- shape -----------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"Cannot reshape {x.shape} to {tuple(shape)}") from exc
    return Tensor.from_op(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(perm))
    return Tensor.from_op(np.transpose(x.data, perm), "transpose", (x,), lambda g: (np.transpose(g, inverse),))


# -- reductions ------------------------------------------------------------------------


def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _normalize_axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray):
        return (_expand_reduced(g, axes, keepdims, x.shape),)

    return Tensor.from_op(np.asarray(out, dtype=x.dtype), "sum", (x,), backward)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = np.mean(x.data, axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray):
        return (_expand_reduced(g / count, axes, keepdims, x.shape),)

    return Tensor.from_op(np.asarray(out, dtype=x.dtype), "mean", (x,), backward)


def batch_moments(x: Tensor) -> Tuple[Tensor, Tensor]:
    """Per-channel mean and biased variance over every axis except axis 1."""
    if x.ndim < 2:
        raise ShapeError(f"batch_moments expects [N, C, ...], got shape {x.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    count = int(np.prod([x.shape[a] for a in axes]))
    if count < 2:
        raise InvalidArgumentError(
            f"batch_moments needs at least 2 values per channel, got {count} for shape {x.shape}"
        )
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    mu = x.data.mean(axis=axes)
    centered = x.data - mu.reshape(bshape)
    var = (centered * centered).mean(axis=axes)

    def mean_backward(g: np.ndarray):
        return (np.broadcast_to(g.reshape(bshape) / count, x.shape),)

    def var_backward(g: np.ndarray):
        return (g.reshape(bshape) * (2.0 / count) * centered,)

    return (
        Tensor.from_op(mu.astype(x.dtype), "batch_mean", (x,), mean_backward),
        Tensor.from_op(var.astype(x.dtype), "batch_var", (x,), var_backward),
    )


# -- linear algebra --------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul expects [N, K] @ [K, M], got {a.shape} @ {b.shape}")

    def backward(g: np.ndarray):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data @ b.data, "matmul", (a, b), backward)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if stride < 1 or span < 0 or span % stride != 0:
        raise ShapeError(
            f"Non-integral conv output size: (size {size} + 2*{padding} - kernel {kernel}) / stride {stride}"
        )
    return span // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation of ``x[N, Cin, H, W]`` with ``weight[Cout, Cin, kh, kw]``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if cin != wcin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    wd = weight.data

    def window(arr: np.ndarray, i: int, j: int) -> np.ndarray:
        return arr[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]

    # [N, Cin, Ho, Wo, kh, kw]
    patches = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(patches, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out, dtype=x.dtype)
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1)

    def backward(g: np.ndarray):
        gw = np.tensordot(g, patches, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            # [N, Ho, Wo, Cin, kh, kw]
            cols = np.tensordot(g, wd, axes=([1], [0]))
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    window(gxp, i, j)[...] += cols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, "conv2d", parents, backward)


def max_pool2d(x: Tensor, size: int) -> Tensor:
    """Non-overlapping ``size x size`` max pooling; ties route the gradient to the first maximum."""
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    if size < 1 or h % size or w % size:
        raise ShapeError(f"max_pool2d size {size} does not tile spatial dims {h}x{w}")
    ho, wo = h // size, w // size
    windows = x.data.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    idx = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, idx, axis=-1)[..., 0]

    def backward(g: np.ndarray):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        return (gw.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return Tensor.from_op(out, "max_pool2d", (x,), backward)


# -- classification --------------------------------------------------------------------


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g: np.ndarray):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor.from_op(out.astype(x.dtype), "log_softmax", (x,), backward)


def gather(x: Tensor, index: ArrayLike) -> Tensor:
    """Pick ``x[i, index[i]]`` for every row of a 2-d tensor."""
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"gather expects x [N, C] and index [N], got {x.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise InvalidArgumentError(f"gather index out of range [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])

    def backward(g: np.ndarray):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return Tensor.from_op(x.data[rows, idx], "gather", (x,), backward)


def cross_entropy(logits: Tensor, labels: ArrayLike) -> Tensor:
    """Mean negative log-likelihood over the batch."""
    return neg(mean(gather(log_softmax(logits, axis=1), labels)))
