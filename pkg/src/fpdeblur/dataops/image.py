"""Grayscale raster type and PNG I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

MIN_SIDE = 8


class ImageError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """H x W raster with values in [0, 1], stored as read-only float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ImageError(f"expected a 2-D array, got shape {arr.shape}")
        if min(arr.shape) < MIN_SIDE:
            raise ImageError(f"image sides must be >= {MIN_SIDE}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ImageError("image values must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def clipped(cls, arr) -> "GrayImage":
        return cls(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def to_uint8(img: GrayImage) -> np.ndarray:
    return np.round(img.data * 255.0).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> GrayImage:
    return GrayImage(np.asarray(arr, dtype=np.float64) / 255.0)


def quantize(img: GrayImage) -> GrayImage:
    """Round-trip through 8 bits, i.e. what a saved PNG will read back as."""
    return from_uint8(to_uint8(img))


def save_png(img: GrayImage, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path, optimize=False)


def load_png(path) -> GrayImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return from_uint8(arr)
