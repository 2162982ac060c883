"""
Random motion-blur kernels
==========================

A random walk with momentum is rasterized with bilinear splatting,
smoothed with a 0.3 px Gaussian, normalized and recentred so that its
centre of mass sits on the central pixel.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..operators.kernels import dirac_kernel

SMOOTHING_SIGMA = 0.3
_MARGIN = 2.0


def _splat(points: np.ndarray, size: int) -> np.ndarray:
    k = np.zeros((size, size))
    base = np.floor(points).astype(int)
    frac = points - base
    for (r, c), (fr, fc) in zip(base, frac):
        for dr, wr in ((0, 1.0 - fr), (1, fr)):
            for dc, wc in ((0, 1.0 - fc), (1, fc)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < size and 0 <= cc < size:
                    k[rr, cc] += wr * wc
    return k


def _centre_of_mass(k: np.ndarray) -> np.ndarray:
    return np.asarray(ndimage.center_of_mass(k), dtype=np.float64)


def random_motion_kernel(size: int, steps: int, rng: np.random.Generator) -> np.ndarray:
    """``[size, size]`` motion kernel summing to 1 with a centred centre of mass.

    ``steps=0`` gives the dirac.
    """
    if size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if steps == 0 or size == 1:
        return dirac_kernel(size)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    velocity = np.array([np.sin(angle), np.cos(angle)])
    points = [np.zeros(2)]
    for _ in range(steps):
        velocity = 0.7 * velocity + 0.3 * rng.standard_normal(2)
        velocity /= max(np.linalg.norm(velocity), 1e-12)
        points.append(points[-1] + velocity)
    points = np.asarray(points)
    points -= points.mean(axis=0)
    reach = np.abs(points).max()
    limit = max((size - 1) / 2.0 - _MARGIN, 0.5)
    if reach > limit:
        points *= limit / reach
    centre = (size - 1) / 2.0
    k = ndimage.gaussian_filter(_splat(points + centre, size), SMOOTHING_SIGMA, mode="constant")
    k /= k.sum()
    for _ in range(3):
        offset = np.array([centre, centre]) - _centre_of_mass(k)
        if np.max(np.abs(offset)) < 1e-9:
            break
        k = ndimage.shift(k, offset, order=1, mode="constant")
        k /= k.sum()
    return k
