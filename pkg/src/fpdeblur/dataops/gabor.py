"""Gabor filter bank: ridge maps (binary ground truth) and foreground segmentation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import cv2
import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from .image import GrayImage


@dataclass(frozen=True)
class GaborParams:
    """Defaults suit ~8 px ridge periods (500 dpi prints)."""

    frequency: float = 1.0 / 8.0
    orientations: int = 8
    kernel_size: int = 21

    def __post_init__(self):
        if not (0.0 < self.frequency < 0.5):
            raise ValueError(f"frequency must be in (0, 0.5) cycles/pixel, got {self.frequency}")
        if self.orientations < 1:
            raise ValueError("need at least one orientation")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")

    @classmethod
    def for_period(cls, period: float, orientations: int = 8) -> "GaborParams":
        k = int(round(2.6 * period)) | 1
        return cls(frequency=1.0 / period, orientations=orientations, kernel_size=max(k, 3))


@lru_cache(maxsize=32)
def gabor_bank(params: GaborParams) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """(even, odd) kernel pairs, one per ridge orientation in [0, pi).

    Both kernels are exactly zero-mean so that responses ignore brightness offsets.
    Ridge orientation ``theta`` is measured counter-clockwise from the +x axis
    with y pointing up on screen; the carrier runs along the ridge normal.
    """
    r = params.kernel_size // 2
    sigma = 0.5 / params.frequency
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    yy = -yy  # rows grow downward; flip to the y-up convention
    envelope = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    bank = []
    for i in range(params.orientations):
        theta = np.pi * i / params.orientations
        # coordinate along the ridge normal
        u = -xx * np.sin(theta) + yy * np.cos(theta)
        phase = 2.0 * np.pi * params.frequency * u
        pair = []
        for carrier in (np.cos(phase), np.sin(phase)):
            g = envelope * carrier
            g = g - envelope * (g.sum() / envelope.sum())
            g /= np.abs(g).sum()
            g.flags.writeable = False
            pair.append(g)
        bank.append(tuple(pair))
    return tuple(bank)


def _filter(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # cv2.filter2D correlates, which is what an oriented template match wants
    return cv2.filter2D(data, cv2.CV_64F, kernel, borderType=cv2.BORDER_REFLECT)


def gabor_responses(img: GrayImage, params: GaborParams) -> tuple[np.ndarray, np.ndarray]:
    """Stacked even and odd responses, shape (orientations, H, W) each."""
    data = np.ascontiguousarray(img.data)
    even = np.stack([_filter(data, e) for e, _ in gabor_bank(params)])
    odd = np.stack([_filter(data, o) for _, o in gabor_bank(params)])
    return even, odd


def gabor_ridge_map(img: GrayImage, params: GaborParams | None = None) -> GrayImage:
    """Binary ridge map: sign of the even response of the best-matching orientation.

    The best orientation per pixel is the one with the largest quadrature energy;
    a pixel is ridge (1) where that filter's even response is positive.
    """
    params = params or GaborParams()
    even, odd = gabor_responses(img, params)
    energy = even**2 + odd**2
    best = np.argmax(energy, axis=0)
    signed = np.take_along_axis(even, best[None], axis=0)[0]
    tol = 1e-9 * max(float(np.abs(img.data).max()), 1e-12)
    return GrayImage((signed > tol).astype(np.float64))


def gabor_energy(img: GrayImage, params: GaborParams | None = None) -> np.ndarray:
    """Max quadrature magnitude over the bank."""
    params = params or GaborParams()
    even, odd = gabor_responses(img, params)
    return np.sqrt(even**2 + odd**2).max(axis=0)


def segment_foreground(img: GrayImage, params: GaborParams | None = None) -> GrayImage:
    """Binary foreground mask from Otsu-thresholded Gabor energy, morphologically closed.

    An image without texture yields an empty mask; rejecting it is up to the caller.
    """
    params = params or GaborParams()
    energy = gabor_energy(img, params)
    period = 1.0 / params.frequency
    energy = ndimage.gaussian_filter(energy, sigma=period / 2.0, mode="reflect")
    if energy.max() <= 1e-6:
        return GrayImage(np.zeros(img.shape))
    if np.ptp(energy) <= 1e-9:
        return GrayImage(np.ones(img.shape))
    mask = energy > threshold_otsu(energy)
    radius = max(int(round(period / 2)), 1)
    structure = ndimage.iterate_structure(ndimage.generate_binary_structure(2, 1), radius)
    padded = np.pad(mask, radius, mode="edge")
    closed = ndimage.binary_closing(padded, structure=structure)[radius:-radius, radius:-radius]
    closed = ndimage.binary_fill_holes(closed)
    return GrayImage(closed.astype(np.float64))
