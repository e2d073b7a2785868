"""SYND v1 dataset directories.

A dataset directory holds ``manifest.txt`` (UTF-8 ``key=value`` lines) plus, per
split, an image blob and a label blob::

    images: b"SYND" | u32 version=1 | u32 count | u32 C | u32 H | u32 W | f32 LE image-major
    labels: b"SYNL" | u32 count | u16 LE labels

Images are stored un-normalized; :func:`load_dataset` applies the manifest's
per-channel normalization unless asked not to.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from bninvert.core.errors import ChecksumError, FormatError, InvalidArgumentError, ShapeError
from bninvert.core.schemas import DatasetManifest

MANIFEST_NAME = "manifest.txt"
IMAGE_MAGIC = b"SYND"
LABEL_MAGIC = b"SYNL"
VERSION = 1
_IMAGE_HEADER = struct.Struct("<4sIIIII")
_LABEL_HEADER = struct.Struct("<4sI")


@dataclass
class Split:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ShapeError(f"Split images must be [N, C, H, W], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeError(f"Split has {self.images.shape[0]} images but labels of shape {self.labels.shape}")

    def __len__(self) -> int:
        return int(self.images.shape[0])


@dataclass
class Dataset:
    manifest: DatasetManifest
    splits: Dict[str, Split] = field(default_factory=dict)
    normalized: bool = False

    @property
    def train(self) -> Split:
        return self._split("train")

    @property
    def test(self) -> Split:
        return self._split("test")

    def _split(self, name: str) -> Split:
        if name not in self.splits:
            raise InvalidArgumentError(f"Dataset '{self.manifest.name}' has no '{name}' split")
        return self.splits[name]

    def normalize(self, images: np.ndarray) -> np.ndarray:
        mean = np.asarray(self.manifest.norm_mean, dtype=np.float32).reshape(1, -1, 1, 1)
        std = np.asarray(self.manifest.norm_std, dtype=np.float32).reshape(1, -1, 1, 1)
        return ((images - mean) / std).astype(np.float32)

    def as_normalized(self) -> "Dataset":
        if self.normalized:
            return self
        splits = {name: Split(self.normalize(s.images), s.labels) for name, s in self.splits.items()}
        return Dataset(manifest=self.manifest, splits=splits, normalized=True)


def encode_images(images: np.ndarray) -> bytes:
    n, c, h, w = images.shape
    return _IMAGE_HEADER.pack(IMAGE_MAGIC, VERSION, n, c, h, w) + np.ascontiguousarray(images, dtype="<f4").tobytes()


def decode_images(blob: bytes, source: str = "images") -> np.ndarray:
    if len(blob) < _IMAGE_HEADER.size:
        raise FormatError(f"{source}: truncated header", offset=len(blob))
    magic, version, n, c, h, w = _IMAGE_HEADER.unpack_from(blob)
    if magic != IMAGE_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}", offset=4)
    expected = _IMAGE_HEADER.size + 4 * n * c * h * w
    if len(blob) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, found {len(blob)}", offset=min(len(blob), expected))
    data = np.frombuffer(blob, dtype="<f4", offset=_IMAGE_HEADER.size)
    return data.astype(np.float32).reshape(n, c, h, w)


def encode_labels(labels: np.ndarray) -> bytes:
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise InvalidArgumentError("Labels must fit in u16")
    return _LABEL_HEADER.pack(LABEL_MAGIC, labels.shape[0]) + np.ascontiguousarray(labels, dtype="<u2").tobytes()


def decode_labels(blob: bytes, source: str = "labels") -> np.ndarray:
    if len(blob) < _LABEL_HEADER.size:
        raise FormatError(f"{source}: truncated header", offset=len(blob))
    magic, n = _LABEL_HEADER.unpack_from(blob)
    if magic != LABEL_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}", offset=0)
    expected = _LABEL_HEADER.size + 2 * n
    if len(blob) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, found {len(blob)}", offset=min(len(blob), expected))
    return np.frombuffer(blob, dtype="<u2", offset=_LABEL_HEADER.size).astype(np.int64)


def _join(values: List[float]) -> str:
    return ",".join(repr(float(v)) for v in values)


def manifest_to_text(manifest: DatasetManifest) -> str:
    lines = [
        "format=SYND",
        f"version={VERSION}",
        f"name={manifest.name}",
        f"classes={manifest.class_count}",
        "dims=" + ",".join(str(d) for d in manifest.image_shape),
        f"norm_mean={_join(manifest.norm_mean)}",
        f"norm_std={_join(manifest.norm_std)}",
    ]
    lines += [f"split.{name}={size}" for name, size in sorted(manifest.split_sizes.items())]
    lines += [f"file.{key}={value}" for key, value in sorted(manifest.files.items())]
    lines += [f"crc32.{key}={value:#010x}" for key, value in sorted(manifest.checksums.items())]
    lines += [f"meta.{key}={value}" for key, value in sorted(manifest.metadata.items())]
    return "\n".join(lines) + "\n"


def manifest_from_text(text: str, source: str = MANIFEST_NAME) -> DatasetManifest:
    fields: Dict[str, str] = {}
    splits: Dict[str, int] = {}
    files: Dict[str, str] = {}
    checksums: Dict[str, int] = {}
    metadata: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected key=value, got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        prefix, _, rest = key.partition(".")
        try:
            if prefix == "split" and rest:
                splits[rest] = int(value)
            elif prefix == "file" and rest:
                files[rest] = value
            elif prefix == "crc32" and rest:
                checksums[rest] = int(value, 0)
            elif prefix == "meta" and rest:
                metadata[rest] = value
            elif key in {"format", "version", "name", "classes", "dims", "norm_mean", "norm_std"}:
                fields[key] = value
            else:
                raise FormatError(f"{source}:{lineno}: unknown manifest key '{key}'")
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"{source}:{lineno}: bad value for '{key}': {value}") from exc

    missing = {"format", "version", "name", "classes", "dims", "norm_mean", "norm_std"} - fields.keys()
    if missing:
        raise FormatError(f"{source}: missing keys {sorted(missing)}")
    if fields["format"] != "SYND" or fields["version"] != str(VERSION):
        raise FormatError(f"{source}: unsupported format {fields['format']} v{fields['version']}")
    try:
        dims = tuple(int(d) for d in fields["dims"].split(","))
        return DatasetManifest(
            name=fields["name"],
            class_count=int(fields["classes"]),
            image_shape=dims,
            split_sizes=splits,
            norm_mean=[float(v) for v in fields["norm_mean"].split(",")],
            norm_std=[float(v) for v in fields["norm_std"].split(",")],
            files=files,
            checksums=checksums,
            metadata=metadata,
        )
    except ValueError as exc:
        raise FormatError(f"{source}: invalid manifest: {exc}") from exc


def save_dataset(dataset: Dataset, out_dir: Path) -> Path:
    """Write every split plus the manifest; returns the manifest path."""
    if dataset.normalized:
        raise InvalidArgumentError("Refusing to save a normalized dataset; save the raw images instead")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = dataset.manifest.model_copy(deep=True)
    manifest.split_sizes = {}
    manifest.files = {}
    manifest.checksums = {}
    for name, split in sorted(dataset.splits.items()):
        if tuple(split.images.shape[1:]) != tuple(manifest.image_shape):
            raise ShapeError(f"Split '{name}' images {split.images.shape[1:]} do not match dims {manifest.image_shape}")
        for kind, blob in (("images", encode_images(split.images)), ("labels", encode_labels(split.labels))):
            file_name = f"{name}_{kind}.bin"
            (out_dir / file_name).write_bytes(blob)
            manifest.files[f"{name}.{kind}"] = file_name
            manifest.checksums[f"{name}.{kind}"] = zlib.crc32(blob)
        manifest.split_sizes[name] = len(split)
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(manifest_to_text(manifest), encoding="utf-8")
    dataset.manifest = manifest
    return manifest_path


def _resolve_manifest_path(path: Path) -> Path:
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.exists():
        raise FileNotFoundError(f"Dataset manifest not found: {manifest_path}")
    return manifest_path


def _read_checked(base: Path, manifest: DatasetManifest, key: str) -> bytes:
    if key not in manifest.files:
        raise FormatError(f"Manifest lists no file for '{key}'")
    blob_path = base / manifest.files[key]
    if not blob_path.exists():
        raise FileNotFoundError(f"Dataset blob not found: {blob_path}")
    blob = blob_path.read_bytes()
    expected: Optional[int] = manifest.checksums.get(key)
    if expected is None:
        raise FormatError(f"Manifest lists no crc32 for '{key}'")
    actual = zlib.crc32(blob)
    if actual != expected:
        raise ChecksumError(f"{blob_path.name}: CRC32 mismatch, manifest {expected:#010x}, file {actual:#010x}")
    return blob


def load_dataset(path: Path, normalize: bool = True) -> Dataset:
    manifest_path = _resolve_manifest_path(path)
    manifest = manifest_from_text(manifest_path.read_text(encoding="utf-8"), source=str(manifest_path))
    base = manifest_path.parent
    dataset = Dataset(manifest=manifest, normalized=normalize)
    for name in sorted(manifest.split_sizes):
        images = decode_images(_read_checked(base, manifest, f"{name}.images"), source=f"{name}.images")
        labels = decode_labels(_read_checked(base, manifest, f"{name}.labels"), source=f"{name}.labels")
        if tuple(images.shape[1:]) != tuple(manifest.image_shape):
            raise ShapeError(f"Split '{name}' images {images.shape[1:]} do not match manifest dims {manifest.image_shape}")
        if images.shape[0] != manifest.split_sizes[name] or labels.shape[0] != images.shape[0]:
            raise ShapeError(
                f"Split '{name}' counts disagree: manifest {manifest.split_sizes[name]}, "
                f"images {images.shape[0]}, labels {labels.shape[0]}"
            )
        if labels.size and labels.max() >= manifest.class_count:
            raise InvalidArgumentError(f"Split '{name}' has label {labels.max()} >= class count {manifest.class_count}")
        dataset.splits[name] = Split(images=dataset.normalize(images) if normalize else images, labels=labels)
    return dataset
