"""Seeded synthetic fingerprints.

A master print per identity: an orientation field with one singular point
(whorl or loop) plus a smooth perturbation, ridges grown from seeded noise by
repeated oriented Gabor filtering along that field, an elliptical finger
silhouette and a smooth pressure map.  Impressions of the same identity
re-render the master with a small shift, contrast change and fresh sensor noise.
"""

from __future__ import annotations

import cv2
import numpy as np
from scipy import ndimage

from .gabor import GaborParams, gabor_bank
from .image import GrayImage
from .orientation import CoreLocation

_N_BINS = 16
_GROWTH_ITERS = 12


def orientation_model(shape, core_xy, index: float, base_angle: float, rng=None, wobble: float = 0.0):
    """Ridge orientation (y-up convention) of a single-singularity field."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    phi = np.arctan2(-(yy - core_xy[1]), xx - core_xy[0])
    theta = index * phi + base_angle
    if rng is not None and wobble > 0:
        for _ in range(3):
            kx, ky = rng.normal(scale=2 * np.pi / max(h, w), size=2)
            theta += wobble / 3.0 * np.cos(kx * xx + ky * yy + rng.uniform(0, 2 * np.pi))
    return np.mod(theta, np.pi)


def grow_ridges(theta: np.ndarray, period: float, rng: np.random.Generator,
                iterations: int = _GROWTH_ITERS) -> np.ndarray:
    """Grow a ridge pattern following ``theta`` from white noise; values in [-1, 1]."""
    params = GaborParams(frequency=1.0 / period, orientations=_N_BINS,
                         kernel_size=int(round(2.6 * period)) | 1)
    bank = [even for even, _ in gabor_bank(params)]
    pos = theta / np.pi * _N_BINS
    lo = np.floor(pos).astype(int) % _N_BINS
    hi = (lo + 1) % _N_BINS
    frac = pos - np.floor(pos)
    x = rng.standard_normal(theta.shape)
    for _ in range(iterations):
        resp = np.stack([cv2.filter2D(x, cv2.CV_64F, k, borderType=cv2.BORDER_REFLECT) for k in bank])
        lo_r = np.take_along_axis(resp, lo[None], 0)[0]
        hi_r = np.take_along_axis(resp, hi[None], 0)[0]
        y = (1 - frac) * lo_r + frac * hi_r
        x = np.tanh(3.0 * y / (y.std() + 1e-12))
    return x


def _identity(seed: int, size: int, period_range, core=None, kind=None):
    rng = np.random.default_rng([20231, seed])
    if kind is None:
        kind = "whorl" if rng.uniform() < 0.5 else "loop"
    index = 1.0 if kind == "whorl" else 0.5
    base_angle = rng.uniform(0, np.pi)
    offset = rng.uniform(-size / 10.0, size / 10.0, size=2)
    if core is None:
        core = (size / 2.0 + offset[0], size / 2.0 + offset[1])
    period = rng.uniform(*period_range)
    theta = orientation_model((size, size), core, index, base_angle, rng, wobble=0.25)
    ridges = grow_ridges(theta, period, rng)
    # finger silhouette: ellipse around the core
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    ax = size * rng.uniform(0.36, 0.48)
    ay = size * rng.uniform(0.42, 0.56)
    ex = core[0] + rng.uniform(-0.15, 0.15) * ax
    ey = core[1] + rng.uniform(-0.05, 0.25) * ay
    rad = np.sqrt(((xx - ex) / ax) ** 2 + ((yy - ey) / ay) ** 2)
    silhouette = np.clip((1.0 - rad) * size / 6.0, 0.0, 1.0)
    pressure = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=size / 8.0, mode="wrap")
    pressure = 0.8 + 0.2 * np.tanh(pressure / (pressure.std() + 1e-12))
    return dict(core=core, period=period, kind=kind, ridges=ridges,
                silhouette=silhouette, pressure=pressure)


def _render(ident, noise_rng, shift=(0.0, 0.0), contrast=1.0, noise=0.02):
    img = ident["silhouette"] * ident["pressure"] * (0.5 + 0.5 * contrast * ident["ridges"])
    if shift != (0.0, 0.0):
        img = ndimage.shift(img, (shift[1], shift[0]), order=1, mode="constant", cval=0.0)
    if noise > 0:
        img = img + noise * noise_rng.standard_normal(img.shape)
    return GrayImage.clipped(img)


def synth_fingerprint(seed: int, size: int = 128, period_range=(6.0, 10.0), *,
                      core=None, kind: str | None = None) -> tuple[GrayImage, CoreLocation]:
    """Master print of identity ``seed`` and its true singular point."""
    if size < 64:
        raise ValueError("size must be >= 64")
    ident = _identity(seed, size, period_range, core, kind)
    img = _render(ident, np.random.default_rng([20232, seed]))
    cx, cy = ident["core"]
    return img, CoreLocation(float(cx), float(cy), 1.0)


def synth_impression(seed: int, impression: int, size: int = 128, period_range=(6.0, 10.0),
                     max_shift: float = 3.0) -> tuple[GrayImage, CoreLocation]:
    """Impression ``impression`` of identity ``seed``; impression 0 is the master."""
    if impression == 0:
        return synth_fingerprint(seed, size, period_range)
    ident = _identity(seed, size, period_range)
    rng = np.random.default_rng([20233, seed, impression])
    shift = tuple(rng.uniform(-max_shift, max_shift, size=2))
    img = _render(ident, rng, shift=shift, contrast=rng.uniform(0.85, 1.0), noise=0.03)
    cx, cy = ident["core"]
    return img, CoreLocation(float(cx + shift[0]), float(cy + shift[1]), 1.0)
