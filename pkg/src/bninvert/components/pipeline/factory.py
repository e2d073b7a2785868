from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from bninvert.adapters.dataset_synd import Dataset, load_dataset
from bninvert.components.fixture.shapes import ShapesFixture
from bninvert.core.errors import InvalidArgumentError
from bninvert.nn.model import ImageShape, Model, build_model
from bninvert.nn.specs import tiny_resnet_specs
from bninvert.settings import RunSettings

logger = logging.getLogger(__name__)


class PipelineFactory:
    """Turns resolved settings into the datasets and models each stage consumes."""

    def __init__(self, settings: RunSettings) -> None:
        self._settings = settings

    def build_model(self, input_shape: ImageShape, class_count: int, seed: Optional[int] = None) -> Model:
        cfg = self._settings.model
        if cfg.arch == "tiny_resnet":
            specs = tiny_resnet_specs(class_count, width=cfg.width)
        else:
            raise InvalidArgumentError(f"Unsupported model arch: {cfg.arch}")
        return build_model(specs, input_shape, seed=cfg.seed if seed is None else seed)

    def generate_fixture(self, seed: Optional[int] = None) -> Dataset:
        cfg = self._settings.dataset.fixture_config(seed)
        logger.info(
            "Generating %s fixture: %d classes, %dx%d, seed=%d", cfg.name, cfg.class_count, cfg.image_size, cfg.image_size, cfg.seed
        )
        return ShapesFixture(cfg).generate()

    def dataset(self, path: Optional[Path] = None) -> Dataset:
        """Normalized dataset from ``path``, else ``dataset.path``, else a freshly generated fixture."""
        source = path or self._settings.dataset.path
        if source is None:
            return self.generate_fixture().as_normalized()
        return load_dataset(source, normalize=True)
