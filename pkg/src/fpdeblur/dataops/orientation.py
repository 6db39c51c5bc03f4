"""Block orientation field (gradient least squares) and core-point location.

Angle convention used throughout: ridge orientation in [0, pi), measured
counter-clockwise from the +x axis with y pointing *up* on screen.  Vertical
ridges (intensity varying along x only) therefore have angle pi/2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, optimize

from .image import GrayImage

log = logging.getLogger(__name__)

DEFAULT_BLOCK = 16
_FLAT_EPS = 1e-10


@dataclass(frozen=True, eq=False)
class OrientationField:
    block_size: int
    angles: np.ndarray
    coherence: np.ndarray
    image_shape: tuple[int, int]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.angles.shape

    def block_center(self, row: int, col: int) -> tuple[float, float]:
        """(x, y) of a block center in pixel-index coordinates, clipped to the image."""
        h, w = self.image_shape
        b = self.block_size
        x = (col * b + min((col + 1) * b, w) - 1) / 2.0
        y = (row * b + min((row + 1) * b, h) - 1) / 2.0
        return x, y


@dataclass(frozen=True)
class CoreLocation:
    x: float
    y: float
    confidence: float


def _gradients(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = ndimage.sobel(data, axis=1, mode="reflect")
    gy = -ndimage.sobel(data, axis=0, mode="reflect")  # y up
    return gx, gy


def _block_sum(a: np.ndarray, b: int) -> np.ndarray:
    h, w = a.shape
    gh, gw = -(-h // b), -(-w // b)
    padded = np.zeros((gh * b, gw * b))
    padded[:h, :w] = a
    return padded.reshape(gh, b, gw, b).sum(axis=(1, 3))


def estimate_orientation(img: GrayImage, block_size: int = DEFAULT_BLOCK) -> OrientationField:
    """Least-squares dominant ridge orientation per block.

    The doubled gradient angle is averaged over each block; the ridge runs
    perpendicular to it.  Coherence is the structure-tensor anisotropy
    sqrt((Gxx-Gyy)^2 + 4Gxy^2) / (Gxx+Gyy).  Flat blocks get angle 0 and
    coherence 0.
    """
    if block_size < 2:
        raise ValueError("block_size must be >= 2")
    if img.height <= block_size and img.width <= block_size:
        raise ValueError("image must span more than one block")
    gx, gy = _gradients(img.data)
    gxx = _block_sum(gx * gx, block_size)
    gyy = _block_sum(gy * gy, block_size)
    gxy = _block_sum(gx * gy, block_size)
    num_x = gxx - gyy
    num_y = 2.0 * gxy
    energy = gxx + gyy
    mag = np.hypot(num_x, num_y)
    flat = energy <= _FLAT_EPS * block_size**2
    with np.errstate(invalid="ignore", divide="ignore"):
        coherence = np.where(flat, 0.0, mag / np.where(flat, 1.0, energy))
    grad_angle = 0.5 * np.arctan2(num_y, num_x)
    angles = np.mod(grad_angle + np.pi / 2.0, np.pi)
    angles = np.where(flat | (mag <= _FLAT_EPS), 0.0, angles)
    angles = np.where(angles >= np.pi, 0.0, angles)
    coherence = np.clip(coherence, 0.0, 1.0)
    return OrientationField(block_size, angles, coherence, img.shape)


def block_ring(radius: int = 1) -> list[tuple[int, int]]:
    """(drow, dcol) offsets of the square ring at Chebyshev distance ``radius``,
    walked counter-clockwise on screen (rows grow downward) starting to the right."""
    r = radius
    ring = [(-k, r) for k in range(0, r)]
    ring += [(-r, c) for c in range(r, -r, -1)]
    ring += [(k, -r) for k in range(-r, r)]
    ring += [(r, c) for c in range(-r, r)]
    ring += [(k, r) for k in range(r, 0, -1)]
    return ring


_RING = block_ring(1)

# a radius-2 ring only counts when it lies entirely on reliable ridge flow
WIDE_RING_MIN_COHERENCE = 0.5


def _ring_views(a: np.ndarray, radius: int) -> list[np.ndarray]:
    gh, gw = a.shape
    return [a[radius + dr : gh - radius + dr, radius + dc : gw - radius + dc] for dr, dc in block_ring(radius)]


def poincare_index(angles: np.ndarray, radius: int = 1) -> np.ndarray:
    """Poincare index (in turns) of each block over the block ring at ``radius``.

    Blocks closer than ``radius`` to the border get 0.  A loop/core reads +1/2,
    a whorl +1, a delta -1/2.
    """
    gh, gw = angles.shape
    out = np.zeros_like(angles)
    if gh < 2 * radius + 1 or gw < 2 * radius + 1:
        return out
    ring = _ring_views(angles, radius)
    total = np.zeros_like(ring[0])
    for k in range(len(ring)):
        d = ring[(k + 1) % len(ring)] - ring[k]
        d = (d + np.pi / 2.0) % np.pi - np.pi / 2.0
        total += d
    out[radius : gh - radius, radius : gw - radius] = total / (2.0 * np.pi)
    return out


def _fit_singularity(field: OrientationField, row: int, col: int, index: float,
                     radius: int = 2, sub: int = 4):
    """Sub-block refinement of a singular point.

    Model: doubled angle 2*theta = 2*index*arg(q - p) + c.  Each block's
    measured vector coherence*exp(2i*theta) is compared with the model vector
    averaged over a sub x sub grid inside the block, which accounts for the
    averaging blur near p.  Returns ((x, y), normalized correlation in [0, 1]).
    """
    gh, gw = field.grid_shape
    b = field.block_size
    r0, r1 = max(row - radius, 0), min(row + radius + 1, gh)
    c0, c1 = max(col - radius, 0), min(col + radius + 1, gw)
    offsets = (np.arange(sub) + 0.5) / sub * b - 0.5
    measured, samples = [], []
    for r in range(r0, r1):
        for c in range(c0, c1):
            measured.append(field.coherence[r, c] * np.exp(2j * field.angles[r, c]))
            yy, xx = np.meshgrid(r * b + offsets, c * b + offsets, indexing="ij")
            samples.append(np.stack([xx.ravel(), yy.ravel()], axis=1))
    measured = np.asarray(measured)
    samples = np.asarray(samples)
    norm_v = np.sum(np.abs(measured) ** 2)
    start = np.asarray(field.block_center(row, col))
    if norm_v <= 0:
        return (float(start[0]), float(start[1])), 0.0

    def corr(p):
        # screen y grows downward; angles use y up
        phi = np.arctan2(-(samples[..., 1] - p[1]), samples[..., 0] - p[0])
        model = np.exp(2j * index * phi).mean(axis=1)
        denom = np.sqrt(np.sum(np.abs(model) ** 2) * norm_v)
        return float(np.abs(np.sum(np.conj(model) * measured)) / denom) if denom > 0 else 0.0

    best = None
    for dx in (-0.25, 0.25):
        for dy in (-0.25, 0.25):
            res = optimize.minimize(lambda p: -corr(p), start + b * np.array([dx, dy]),
                                    method="Nelder-Mead", options={"xatol": 0.05, "fatol": 1e-10})
            if best is None or res.fun < best.fun:
                best = res
    p = best.x
    if not np.all(np.isfinite(p)) or np.max(np.abs(p - start)) > 1.5 * b:
        p = start
    return (float(p[0]), float(p[1])), corr(p)


def locate_core(field: OrientationField, threshold: float = 0.2) -> CoreLocation:
    """Core point from the Poincare index of the block field.

    Candidates are blocks whose 8-neighbour ring index reads +1/2 (loop) or +1
    (whorl), plus blocks whose radius-2 ring reads +1 while lying wholly on coherent flow.  The wider ring catches
    whorls that the ridge pattern has split into two nearby +1/2 points, which
    no 8-neighbour ring encloses together.  Each candidate is scored by index
    times mean ring coherence; ties go to the smaller ring, then the
    top-left-most block.  The winner is refined to pixel precision by a
    singular-point model fit.  When nothing qualifies the image center is
    returned with confidence 0.
    """
    gh, gw = field.grid_shape
    h, w = field.image_shape
    fallback = CoreLocation(w / 2.0, h / 2.0, 0.0)
    if gh < 4 or gw < 4:
        log.warning("orientation field %sx%s too small for core detection", gh, gw)
        return fallback
    best = None
    for radius in (1, 2):
        if gh < 2 * radius + 1 or gw < 2 * radius + 1:
            continue
        pidx = poincare_index(field.angles, radius)
        views = _ring_views(field.coherence, radius)
        ring_coh = np.zeros_like(field.coherence)
        ring_min = np.zeros_like(field.coherence)
        ring_coh[radius : gh - radius, radius : gw - radius] = np.mean(views, axis=0)
        ring_min[radius : gh - radius, radius : gw - radius] = np.min(views, axis=0)
        for r in range(radius, gh - radius):
            for c in range(radius, gw - radius):
                p = pidx[r, c]
                if abs(p - 0.5) < 0.25 and radius == 1:
                    kind = 0.5
                elif abs(p - 1.0) < 0.25 and (radius == 1 or ring_min[r, c] >= WIDE_RING_MIN_COHERENCE):
                    kind = 1.0
                else:
                    continue
                key = (-kind * ring_coh[r, c], radius, r, c)
                if best is None or key < best[0]:
                    best = (key, r, c, kind, radius, ring_coh[r, c])
    if best is None:
        log.info("no singular point found; falling back to image center")
        return fallback
    _, r, c, kind, radius, coh = best
    (x, y), response = _fit_singularity(field, r, c, kind, radius=radius + 1)
    confidence = float(np.clip(response * coh ** 0.5, 0.0, 1.0))
    if response < threshold:
        log.info("singular point response %.3f below threshold; falling back", response)
        return fallback
    x = float(np.clip(x, 0.0, w - 1.0))
    y = float(np.clip(y, 0.0, h - 1.0))
    return CoreLocation(x, y, confidence)
