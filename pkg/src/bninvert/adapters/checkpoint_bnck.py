"""BNCK v1 checkpoint codec.

Layout (little-endian)::

    b"BNCK" | u32 version=1 | u32 record_count | records... | u32 crc32(all preceding bytes)

    record := u8 kind | u32 rank | rank * u32 attrs | buffers as raw f32

The first record is always ``input`` with attrs (C, H, W). Residual records carry
their inner record count as their single attr; the inner records follow directly
and are not counted in ``record_count``.
"""
from __future__ import annotations

import hashlib
import struct
import zlib
from pathlib import Path
from typing import List, Tuple

import numpy as np

from bninvert.core.errors import ChecksumError, FormatError, InvalidModelError
from bninvert.core.interfaces import Layer
from bninvert.core.tensor import Tensor
from bninvert.nn.layers import BatchNorm, BNLayerState, Conv2d, GlobalAvgPool, Linear, MaxPool, ReLU, Residual
from bninvert.nn.model import Model

MAGIC = b"BNCK"
VERSION = 1

KIND_INPUT = 0
KIND_CONV = 1
KIND_LINEAR = 2
KIND_BN = 3
KIND_RELU = 4
KIND_MAXPOOL = 5
KIND_GAP = 6
KIND_RESIDUAL = 7


def _f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _record(kind: int, attrs: Tuple[int, ...], buffers: Tuple[np.ndarray, ...] = ()) -> bytes:
    head = struct.pack("<BI", kind, len(attrs)) + struct.pack(f"<{len(attrs)}I", *attrs)
    return head + b"".join(_f32(b) for b in buffers)


def _encode_layer(layer: Layer) -> bytes:
    if isinstance(layer, Conv2d):
        attrs = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel, layer.stride, layer.padding)
        return _record(KIND_CONV, attrs, (layer.weight.data, layer.bias.data))
    if isinstance(layer, Linear):
        return _record(KIND_LINEAR, (layer.out_features, layer.in_features), (layer.weight.data, layer.bias.data))
    if isinstance(layer, BatchNorm):
        s = layer.state
        return _record(KIND_BN, (s.channels,), (s.gamma.data, s.beta.data, s.running_mean, s.running_var))
    if isinstance(layer, ReLU):
        return _record(KIND_RELU, ())
    if isinstance(layer, MaxPool):
        return _record(KIND_MAXPOOL, (layer.size,))
    if isinstance(layer, GlobalAvgPool):
        return _record(KIND_GAP, ())
    if isinstance(layer, Residual):
        return _record(KIND_RESIDUAL, (len(layer.body),)) + b"".join(_encode_layer(inner) for inner in layer.body)
    raise InvalidModelError(f"Layer kind '{getattr(layer, 'kind', type(layer).__name__)}' is not serializable")


def model_to_bytes(model: Model) -> bytes:
    body = _record(KIND_INPUT, tuple(model.input_shape)) + b"".join(_encode_layer(layer) for layer in model.layers)
    payload = MAGIC + struct.pack("<II", VERSION, len(model.layers) + 1) + body
    return payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, blob: bytes, end: int) -> None:
        self._blob = blob
        self._end = end
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > self._end:
            raise FormatError(f"Truncated checkpoint: wanted {n} bytes", offset=self.offset)
        chunk = self._blob[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32s(self, count: int) -> Tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    def floats(self, shape: Tuple[int, ...]) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True, dtype=np.float32)


def _decode_record(reader: _Reader) -> Tuple[int, Tuple[int, ...], Layer | None]:
    start = reader.offset
    kind = reader.u8()
    (rank,) = reader.u32s(1)
    if rank > 8:
        raise FormatError(f"Implausible attribute rank {rank}", offset=start + 1)
    attrs = reader.u32s(rank)

    def need(n: int) -> None:
        if rank != n:
            raise FormatError(f"Layer kind {kind} expects {n} attrs, got {rank}", offset=start + 1)

    if kind == KIND_INPUT:
        need(3)
        return kind, attrs, None
    if kind == KIND_CONV:
        need(6)
        cout, cin, kh, kw, stride, padding = attrs
        weight = reader.floats((cout, cin, kh, kw))
        bias = reader.floats((cout,))
        return kind, attrs, Conv2d(_param(weight), _param(bias), stride=stride, padding=padding)
    if kind == KIND_LINEAR:
        need(2)
        out, inp = attrs
        return kind, attrs, Linear(_param(reader.floats((out, inp))), _param(reader.floats((out,))))
    if kind == KIND_BN:
        need(1)
        (c,) = attrs
        gamma, beta, mean, var = (reader.floats((c,)) for _ in range(4))
        state = BNLayerState(gamma=_param(gamma), beta=_param(beta), running_mean=mean, running_var=var)
        return kind, attrs, BatchNorm(state)
    if kind == KIND_RELU:
        need(0)
        return kind, attrs, ReLU()
    if kind == KIND_MAXPOOL:
        need(1)
        return kind, attrs, MaxPool(attrs[0])
    if kind == KIND_GAP:
        need(0)
        return kind, attrs, GlobalAvgPool()
    if kind == KIND_RESIDUAL:
        need(1)
        return kind, attrs, Residual([_decode_layer(reader) for _ in range(attrs[0])])
    raise FormatError(f"Unknown layer kind tag {kind}", offset=start)


def _decode_layer(reader: _Reader) -> Layer:
    start = reader.offset
    kind, _attrs, layer = _decode_record(reader)
    if layer is None:
        raise FormatError(f"Unexpected record kind {kind} inside model body", offset=start)
    return layer


def model_from_bytes(blob: bytes) -> Model:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise FormatError(f"Bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(blob) < 16:
        raise FormatError("Truncated checkpoint header", offset=len(blob))
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    actual_crc = zlib.crc32(blob[:-4])
    if stored_crc != actual_crc:
        raise ChecksumError(f"CRC32 mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}", offset=len(blob) - 4)

    reader = _Reader(blob, end=len(blob) - 4)
    reader.take(4)
    version, count = reader.u32s(2)
    if version != VERSION:
        raise FormatError(f"Unsupported BNCK version {version}", offset=4)
    if count < 2:
        raise FormatError(f"Checkpoint holds {count} records; needs an input record and at least one layer", offset=8)

    start = reader.offset
    kind, input_shape, _ = _decode_record(reader)
    if kind != KIND_INPUT:
        raise FormatError(f"First record must be the input descriptor, got kind {kind}", offset=start)
    layers: List[Layer] = [_decode_layer(reader) for _ in range(count - 1)]
    if reader.offset != len(blob) - 4:
        raise FormatError("Trailing bytes after last record", offset=reader.offset)
    if not isinstance(layers[-1], Linear):
        raise InvalidModelError("Checkpoint model must end in a Linear classifier")
    return Model(layers=layers, input_shape=tuple(input_shape), class_count=layers[-1].out_features)


def save_checkpoint(model: Model, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(model_to_bytes(model))
    return path


def load_checkpoint(path: Path) -> Model:
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return model_from_bytes(path.read_bytes())


def model_checksum(model: Model) -> str:
    return hashlib.sha256(model_to_bytes(model)).hexdigest()
