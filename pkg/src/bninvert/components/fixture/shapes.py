from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from bninvert.adapters.dataset_synd import Dataset, Split
from bninvert.core.errors import InvalidArgumentError
from bninvert.core.sampling import derive_seed, generator
from bninvert.core.schemas import DatasetManifest

# (yy, xx, cy, cx, r) -> boolean mask
MaskFn = Callable[[np.ndarray, np.ndarray, float, float, float], np.ndarray]


def _square(yy, xx, cy, cx, r):
    return (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)


def _disk(yy, xx, cy, cx, r):
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


def _plus(yy, xx, cy, cx, r):
    arm = r / 3.0
    return ((np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= r)) | ((np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= r))


def _stripes(yy, xx, cy, cx, r):
    band = np.floor((yy - (cy - r)) / max(r / 2.0, 1.0)).astype(np.int64) % 2 == 0
    return _square(yy, xx, cy, cx, r) & band


def _triangle(yy, xx, cy, cx, r):
    depth = yy - (cy - r)
    return (depth >= 0) & (yy <= cy + r) & (np.abs(xx - cx) <= depth / 2.0)


def _ring(yy, xx, cy, cx, r):
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)


GEOMETRIES: Tuple[Tuple[str, MaskFn], ...] = (
    ("square", _square),
    ("disk", _disk),
    ("plus", _plus),
    ("stripes", _stripes),
    ("triangle", _triangle),
    ("ring", _ring),
)


@dataclass(frozen=True)
class ShapesFixtureConfig:
    class_count: int = 4
    image_size: int = 16
    channels: int = 3
    train_per_class: int = 500
    test_per_class: int = 125
    noise_std: float = 0.05
    seed: int = 1337
    name: str = "shapes"


class ShapesFixture:
    """Class ``c`` draws geometry ``GEOMETRIES[c]`` with random colors, size, position and pixel noise."""

    def __init__(self, cfg: ShapesFixtureConfig):
        if not 2 <= cfg.class_count <= len(GEOMETRIES):
            raise InvalidArgumentError(f"class_count must be in [2, {len(GEOMETRIES)}], got {cfg.class_count}")
        if cfg.channels not in (1, 3):
            raise InvalidArgumentError(f"channels must be 1 or 3, got {cfg.channels}")
        if cfg.image_size < 8:
            raise InvalidArgumentError(f"image_size must be at least 8, got {cfg.image_size}")
        self._cfg = cfg
        coords = np.arange(cfg.image_size, dtype=np.float64) + 0.5
        self._yy, self._xx = np.meshgrid(coords, coords, indexing="ij")

    def _render(self, rng: np.random.Generator, cls: int) -> np.ndarray:
        cfg = self._cfg
        size = cfg.image_size
        r = rng.uniform(0.22, 0.34) * size
        cy = rng.uniform(r, size - r)
        cx = rng.uniform(r, size - r)
        mask = GEOMETRIES[cls][1](self._yy, self._xx, cy, cx, r)
        background = rng.uniform(0.0, 0.35, size=(cfg.channels, 1, 1))
        foreground = rng.uniform(0.6, 1.0, size=(cfg.channels, 1, 1))
        image = np.where(mask[None], foreground, background)
        image = image + rng.normal(0.0, cfg.noise_std, size=image.shape)
        return np.clip(image, 0.0, 1.0)

    def _split(self, name: str, per_class: int) -> Split:
        cfg = self._cfg
        rng = generator(derive_seed(cfg.seed, "fixture", name))
        count = per_class * cfg.class_count
        labels = np.arange(count, dtype=np.int64) % cfg.class_count
        images = np.stack([self._render(rng, int(c)) for c in labels]).astype(np.float32)
        return Split(images=images, labels=labels)

    def generate(self) -> Dataset:
        cfg = self._cfg
        splits: Dict[str, Split] = {
            "train": self._split("train", cfg.train_per_class),
            "test": self._split("test", cfg.test_per_class),
        }
        train = splits["train"].images.astype(np.float64)
        mean = train.mean(axis=(0, 2, 3))
        std = np.maximum(train.std(axis=(0, 2, 3)), 1e-3)
        manifest = DatasetManifest(
            name=cfg.name,
            class_count=cfg.class_count,
            image_shape=(cfg.channels, cfg.image_size, cfg.image_size),
            norm_mean=[float(np.float32(m)) for m in mean],
            norm_std=[float(np.float32(s)) for s in std],
            metadata={
                "generator": "shapes",
                "geometries": ",".join(name for name, _ in GEOMETRIES[: cfg.class_count]),
                "seed": str(cfg.seed),
                "noise_std": repr(cfg.noise_std),
            },
        )
        return Dataset(manifest=manifest, splits=splits)
