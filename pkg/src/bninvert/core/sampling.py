"""Seeded sampling.

Every random draw in bninvert goes through a Philox counter-based generator keyed
by a 64-bit seed. Gaussian samples use Box-Muller on pairs of uniforms: pair ``i``
consumes ``u1[i], u2[i]`` and fills row-major positions ``2i`` (cosine branch) and
``2i + 1`` (sine branch); an odd trailing sine value is dropped.
"""
from __future__ import annotations

import hashlib
from typing import Optional, Sequence

import numpy as np
from numpy.typing import DTypeLike

from bninvert.core.errors import InvalidArgumentError
from bninvert.core.tensor import Tensor, default_dtype

_U64_MASK = (1 << 64) - 1


def derive_seed(*parts: object) -> int:
    """Return a deterministic 64-bit seed from arbitrary key parts."""
    payload = "|".join("" if part is None else str(part) for part in parts)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & _U64_MASK))


def standard_normal(count: int, seed: int) -> np.ndarray:
    """``count`` float64 standard-normal samples in stream order."""
    pairs = (count + 1) // 2
    rng = generator(seed)
    u1 = 1.0 - rng.random(pairs)  # (0, 1], keeps log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(pairs * 2, dtype=np.float64)
    out[0::2] = radius * np.cos(theta)
    out[1::2] = radius * np.sin(theta)
    return out[:count]


def randn(
    shape: Sequence[int],
    mean: float = 0.0,
    stddev: float = 1.0,
    seed: int = 0,
    requires_grad: bool = False,
    dtype: Optional[DTypeLike] = None,
) -> Tensor:
    dims = tuple(int(d) for d in shape)
    if not dims or any(d < 1 for d in dims):
        raise InvalidArgumentError(f"randn needs a non-empty shape of positive dims, got {dims}")
    if not stddev > 0:
        raise InvalidArgumentError(f"randn stddev must be positive, got {stddev}")
    count = int(np.prod(dims))
    values = mean + stddev * standard_normal(count, seed)
    return Tensor(values.reshape(dims), requires_grad=requires_grad, dtype=dtype or default_dtype())


def permutation(n: int, seed: int) -> np.ndarray:
    return generator(seed).permutation(n)
