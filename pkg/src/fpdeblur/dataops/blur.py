"""Separable Gaussian blur with the kernel size tied to sigma (k = 6*sigma - 1)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import GrayImage

DEFAULT_SIGMAS = (3.0, 5.0, 7.0)


class BlurConfigError(ValueError):
    pass


def kernel_size_for(sigma: float) -> int:
    """6*sigma - 1, rounded to the nearest odd integer for non-integer sigma."""
    k = 6.0 * sigma - 1.0
    nearest_odd = 2 * int(np.floor((k - 1.0) / 2.0 + 0.5)) + 1
    return max(nearest_odd, 1)


@dataclass(frozen=True)
class BlurConfig:
    sigma: float
    kernel_size: int

    def __post_init__(self):
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise BlurConfigError(f"sigma must be positive, got {self.sigma}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise BlurConfigError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")

    @classmethod
    def from_sigma(cls, sigma: float) -> "BlurConfig":
        return cls(float(sigma), kernel_size_for(float(sigma)))


def gaussian_kernel_1d(cfg: BlurConfig) -> np.ndarray:
    radius = cfg.kernel_size // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / cfg.sigma) ** 2)
    return w / w.sum()


def gaussian_kernel_2d(cfg: BlurConfig) -> np.ndarray:
    k = gaussian_kernel_1d(cfg)
    return np.outer(k, k)


def gaussian_blur(img: GrayImage, cfg: BlurConfig) -> GrayImage:
    """Blur with a normalized separable Gaussian; borders use reflect padding
    (edge sample repeated), so there is no dark halo."""
    if cfg.kernel_size > 2 * min(img.shape):
        raise BlurConfigError(
            f"kernel_size {cfg.kernel_size} exceeds twice the smallest image side {min(img.shape)}"
        )
    k = gaussian_kernel_1d(cfg)
    out = ndimage.correlate1d(img.data, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    return GrayImage.clipped(out)
