import numpy as np
import orjson
import pytest

from bninvert.adapters.ppm_export import GRID_NAME, META_NAME, export_images, read_ppm, to_rgb8
from bninvert.core.errors import InvalidArgumentError, ShapeError


def test_ppm_header_and_payload_size(tmp_path) -> None:
    image = np.random.default_rng(0).normal(size=(1, 3, 16, 16)).astype(np.float32)
    export_images(image, np.array([2]), tmp_path)
    data = (tmp_path / "2_0.ppm").read_bytes()
    header = b"P6\n16 16\n255\n"
    assert data.startswith(header)
    assert len(data) == len(header) + 768


def test_constant_image_maps_to_zero() -> None:
    rgb = to_rgb8(np.full((3, 4, 4), 0.7, dtype=np.float32))
    assert rgb.shape == (4, 4, 3)
    assert not rgb.any()


def test_grayscale_is_replicated() -> None:
    rgb = to_rgb8(np.arange(4, dtype=np.float32).reshape(1, 2, 2))
    assert rgb.shape == (2, 2, 3)
    np.testing.assert_array_equal(rgb[..., 0], rgb[..., 2])


def test_reparse_within_quantization(tmp_path) -> None:
    image = np.random.default_rng(1).normal(size=(3, 8, 8)).astype(np.float32)
    export_images(image[None], np.array([0]), tmp_path)
    pixels = read_ppm(tmp_path / "0_0.ppm").astype(np.float64) / 255.0
    lo, hi = image.min(), image.max()
    expected = ((image - lo) / (hi - lo)).transpose(1, 2, 0)
    assert np.abs(pixels - expected).max() <= 1.0 / 255.0


def test_grid_has_one_row_per_class(tmp_path) -> None:
    images = np.random.default_rng(2).normal(size=(6, 3, 4, 4)).astype(np.float32)
    labels = np.array([0, 1, 0, 1, 0, 1])
    written = export_images(images, labels, tmp_path, max_per_class=2, grid_cols=3)
    assert len(written) == 5
    grid = read_ppm(tmp_path / GRID_NAME)
    assert grid.shape == (8, 12, 3)
    np.testing.assert_array_equal(grid[:4, :4], read_ppm(tmp_path / "0_0.ppm"))
    np.testing.assert_array_equal(grid[4:, 4:8], read_ppm(tmp_path / "1_3.ppm"))
    meta = orjson.loads((tmp_path / META_NAME).read_bytes())
    assert meta["images"] == 4
    assert meta["grid"]["rows"] == [0, 1]


def test_unwritable_directory(tmp_path) -> None:
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(InvalidArgumentError):
        export_images(np.zeros((1, 3, 2, 2), dtype=np.float32), np.array([0]), blocker / "out")


def test_rejects_bad_shapes(tmp_path) -> None:
    with pytest.raises(ShapeError):
        export_images(np.zeros((3, 2, 2)), np.array([0]), tmp_path)
    with pytest.raises(ShapeError):
        to_rgb8(np.zeros((2, 4, 4)))
