from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import orjson
from PIL import Image

from bninvert.core.errors import InvalidArgumentError, ShapeError

GRID_NAME = "grid.ppm"
META_NAME = "export_meta.json"


def to_rgb8(image: np.ndarray) -> np.ndarray:
    """Per-image min-max scaling of ``[C, H, W]`` to ``[H, W, 3]`` uint8; a flat image maps to 0."""
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ShapeError(f"Export expects [1|3, H, W] images, got {image.shape}")
    data = image.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        scaled = np.zeros_like(data)
    else:
        scaled = np.rint((data - lo) / (hi - lo) * 255.0)
    rgb = np.clip(scaled, 0, 255).astype(np.uint8).transpose(1, 2, 0)
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    return np.ascontiguousarray(rgb)


def write_ppm(path: Path, rgb: np.ndarray) -> Path:
    Image.fromarray(rgb).save(path, format="PPM")
    return path


def read_ppm(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _grid(cells_by_class: Dict[int, List[np.ndarray]], cols: int, h: int, w: int) -> np.ndarray:
    classes = sorted(cells_by_class)
    canvas = np.zeros((len(classes) * h, cols * w, 3), dtype=np.uint8)
    for row, cls in enumerate(classes):
        for col, cell in enumerate(cells_by_class[cls][:cols]):
            canvas[row * h : (row + 1) * h, col * w : (col + 1) * w] = cell
    return canvas


def export_images(
    images: np.ndarray,
    labels: np.ndarray,
    out_dir: Path,
    max_per_class: Optional[int] = None,
    grid_cols: int = 8,
) -> List[Path]:
    """Write ``<class>_<index>.ppm`` per image plus a row-per-class ``grid.ppm`` montage."""
    if images.ndim != 4 or labels.shape != (images.shape[0],):
        raise ShapeError(f"Export expects images [N, C, H, W] with N labels, got {images.shape} / {labels.shape}")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidArgumentError(f"Cannot create export directory {out_dir}: {exc}") from exc

    written: List[Path] = []
    per_class: Dict[int, List[np.ndarray]] = {}
    try:
        for index, (image, label) in enumerate(zip(images, labels)):
            cls = int(label)
            cells = per_class.setdefault(cls, [])
            if max_per_class is not None and len(cells) >= max_per_class:
                continue
            rgb = to_rgb8(image)
            cells.append(rgb)
            written.append(write_ppm(out_dir / f"{cls}_{index}.ppm", rgb))
        if per_class:
            _, h, w = images.shape[1:]
            written.append(write_ppm(out_dir / GRID_NAME, _grid(per_class, grid_cols, h, w)))
        meta = {
            "normalization": "per-image min-max to [0, 255]; constant images map to 0",
            "images": len(written) - (1 if per_class else 0),
            "grid": {"rows": sorted(per_class), "cols": grid_cols},
        }
        (out_dir / META_NAME).write_bytes(orjson.dumps(meta, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    except OSError as exc:
        raise InvalidArgumentError(f"Cannot write images to {out_dir}: {exc}") from exc
    return written
