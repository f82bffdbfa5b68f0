"""Datasets: the raw binary container, a PNG-directory loader, and the
synthetic desk-scale dataset generator.

Raw binary layout (little-endian):

    magic   4 bytes  b"DFD1"
    N, C, channels, H, W   five u32
    pixels  u8, N * channels * H * W bytes, row-major
    labels  u8, N bytes

Pixels load as float32 / 255. The synthetic dataset renders each class as a
sinusoidal grating with a class-specific orientation and frequency; the
phase is random per sample, so raw pixels are useless to a linear model
while small convnets separate the classes easily.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DFD1"
_HEADER = struct.Struct("<5I")


class DataFormatError(ValueError):
    """Malformed dataset file."""


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, channels, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, num_classes)
    num_classes: int
    split: str = "train"
    provenance: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise DataFormatError(f"images must be a non-empty (N, C, H, W) array, "
                                  f"got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataFormatError("labels must be one per image")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataFormatError(f"label outside [0, {self.num_classes})")
        if self.images.min() < 0 or self.images.max() > 1:
            raise DataFormatError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]


def save_dataset(ds: ImageDataset, path) -> None:
    n, ch, h, w = ds.images.shape
    if ds.num_classes > 255:
        raise DataFormatError("raw format stores labels as u8; num_classes must be <= 255")
    pixels = np.round(ds.images * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(n, ds.num_classes, ch, h, w))
        f.write(pixels.tobytes())
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_dataset(path, format: str = "raw", split: str = "test") -> ImageDataset:
    if format == "raw":
        return _load_raw(path, split)
    if format == "png_dir":
        return _load_png_dir(path, split)
    raise DataFormatError(f"unknown dataset format {format!r}")


def _load_raw(path, split: str) -> ImageDataset:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise DataFormatError(f"bad magic {blob[:4]!r} at byte offset 0, expected {MAGIC!r}")
    if len(blob) < 4 + _HEADER.size:
        raise DataFormatError(f"truncated header: file has {len(blob)} bytes, "
                              f"need {4 + _HEADER.size}")
    n, c, ch, h, w = _HEADER.unpack_from(blob, 4)
    pixel_off = 4 + _HEADER.size
    pixel_len = n * ch * h * w
    label_off = pixel_off + pixel_len
    expected = label_off + n
    if len(blob) != expected:
        section = "pixel" if len(blob) < label_off else "label"
        raise DataFormatError(f"truncated {section} section at byte offset {len(blob)}: "
                              f"expected total {expected} bytes, got {len(blob)}")
    pixels = np.frombuffer(blob, dtype=np.uint8, count=pixel_len, offset=pixel_off)
    labels = np.frombuffer(blob, dtype=np.uint8, count=n, offset=label_off).astype(np.int64)
    bad = np.nonzero(labels >= c)[0]
    if bad.size:
        i = int(bad[0])
        raise DataFormatError(f"label {labels[i]} >= num_classes {c} for sample {i} "
                              f"at byte offset {label_off + i}")
    images = pixels.reshape(n, ch, h, w).astype(np.float32) / 255.0
    return ImageDataset(images, labels, num_classes=c, split=split,
                        provenance=f"raw:{path}")


def _load_png_dir(path, split: str) -> ImageDataset:
    from PIL import Image

    root = Path(path)
    labels_file = root / "labels.csv"
    if not labels_file.exists():
        raise DataFormatError(f"missing labels file {labels_file}")
    names, labels = [], []
    with open(labels_file, newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            names.append(row[0].strip())
            labels.append(int(row[1]))
    images = []
    for name in names:
        with Image.open(root / name) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        images.append(arr.transpose(2, 0, 1))
    stacked = np.stack(images)
    num_classes = max(labels) + 1
    return ImageDataset(stacked, np.asarray(labels), num_classes=num_classes,
                        split=split, provenance=f"png_dir:{path}")


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    train_per_class: int = 500
    test_per_class: int = 100
    image_size: int = 32
    channels: int = 3
    amplitude: float = 0.15
    noise: float = 0.12

    def class_pattern(self, c: int) -> tuple[float, float]:
        """(orientation, cycles-per-image) for class c."""
        n_orient = min(self.num_classes, 5)
        orient = math.pi * (c % n_orient) / n_orient
        freq = 2.0 + 2.0 * (c // n_orient)
        return orient, freq


def _render_class(spec: SyntheticSpec, c: int, count: int,
                  rng: np.random.Generator) -> np.ndarray:
    orient, freq = spec.class_pattern(c)
    s = spec.image_size
    grid = np.arange(s, dtype=np.float32) / s
    u, v = np.meshgrid(grid, grid, indexing="ij")
    ramp = (math.cos(orient) * u + math.sin(orient) * v)[None, :, :]
    phase = rng.uniform(0.0, 2.0 * math.pi, size=(count, 1, 1)).astype(np.float32)
    wave = np.sin(2.0 * math.pi * freq * ramp + phase)
    gains = np.linspace(1.0, 0.6, spec.channels, dtype=np.float32).reshape(1, -1, 1, 1)
    base = 0.5 + spec.amplitude * wave[:, None, :, :] * gains
    base += rng.normal(0.0, spec.noise, size=base.shape).astype(np.float32)
    return np.clip(base, 0.0, 1.0, out=base)


def make_synthetic_dataset(spec: SyntheticSpec, seed: int) -> tuple[ImageDataset, ImageDataset]:
    """Deterministic (train, test) pair with disjoint samples."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    tr_images, tr_labels, te_images, te_labels = [], [], [], []
    for c in range(spec.num_classes):
        block = _render_class(spec, c, spec.train_per_class + spec.test_per_class, rng)
        tr_images.append(block[:spec.train_per_class])
        te_images.append(block[spec.train_per_class:])
        tr_labels.append(np.full(spec.train_per_class, c, dtype=np.int64))
        te_labels.append(np.full(spec.test_per_class, c, dtype=np.int64))
    prov = f"synthetic:seed={seed}"
    train = ImageDataset(np.concatenate(tr_images), np.concatenate(tr_labels),
                         num_classes=spec.num_classes, split="train", provenance=prov)
    test = ImageDataset(np.concatenate(te_images), np.concatenate(te_labels),
                        num_classes=spec.num_classes, split="test", provenance=prov)
    return train, test
