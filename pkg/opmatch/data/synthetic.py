"""
Synthetic image sources
=======================

Scale-invariant textures used as stand-ins for natural images:

- dead leaves: occluding disks with radii drawn from ``r^-3``
- pink noise: Gaussian field with ``1/f^alpha`` amplitude spectrum

and a self-similar fixture built by repeatedly blurring and downscaling.
"""

from __future__ import annotations

from typing import Callable, Dict, Optional

import numpy as np
from scipy import ndimage


def dead_leaves(
    size: int,
    rng: np.random.Generator,
    channels: int = 1,
    r_min: float = 1.0,
    r_max: Optional[float] = None,
    coverage: float = 4.0,
) -> np.ndarray:
    """``[C, size, size]`` dead-leaves image in ``[-1, 1]``.

    Disks are painted back to front until ``coverage`` times the image area
    has been laid down.
    """
    r_max = r_max or size / 4.0
    img = np.zeros((channels, size, size))
    area = 0.0
    target = coverage * size * size
    rows, cols = np.arange(size)[:, None], np.arange(size)[None, :]
    while area < target:
        # inverse-CDF sample of p(r) ~ r^-3 on [r_min, r_max]
        u = rng.random()
        r = 1.0 / np.sqrt(u / r_max**2 + (1.0 - u) / r_min**2)
        cy, cx = rng.uniform(-r, size + r, size=2)
        colour = rng.uniform(-1.0, 1.0, size=channels)
        r0, r1 = int(max(0, np.floor(cy - r))), int(min(size, np.ceil(cy + r) + 1))
        c0, c1 = int(max(0, np.floor(cx - r))), int(min(size, np.ceil(cx + r) + 1))
        if r0 >= r1 or c0 >= c1:
            continue
        mask = (rows[r0:r1] - cy) ** 2 + (cols[:, c0:c1] - cx) ** 2 <= r * r
        img[:, r0:r1, c0:c1][:, mask] = colour[:, None]
        area += np.pi * r * r
    return img


def pink_noise(
    size: int, rng: np.random.Generator, channels: int = 1, exponent: float = 1.0
) -> np.ndarray:
    """``[C, size, size]`` ``1/f^exponent`` noise rescaled to span ``[-1, 1]``."""
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    radius = np.sqrt(fy**2 + fx**2)
    radius[0, 0] = 1.0
    amplitude = radius**-exponent
    amplitude[0, 0] = 0.0
    out = np.empty((channels, size, size))
    for c in range(channels):
        phase = rng.standard_normal(amplitude.shape) + 1j * rng.standard_normal(amplitude.shape)
        spectrum = amplitude * phase
        field = np.fft.irfft2(spectrum, s=(size, size))
        lo, hi = field.min(), field.max()
        out[c] = 2.0 * (field - lo) / (hi - lo) - 1.0 if hi > lo else 0.0
    return out


SOURCES: Dict[str, Callable[..., np.ndarray]] = {
    "dead_leaves": dead_leaves,
    "pink_noise": pink_noise,
}


def synthetic_image(name: str, size: int, rng: np.random.Generator, channels: int = 1) -> np.ndarray:
    try:
        generator = SOURCES[name]
    except KeyError:
        raise ValueError(f"unknown synthetic source {name!r}; choose from {sorted(SOURCES)}")
    return generator(size, rng, channels=channels)


def blur_downsample(image: np.ndarray, kernel: np.ndarray, scale: int) -> np.ndarray:
    """``(x * k)`` subsampled by ``scale`` (correlation, replicate border, top-left phase)."""
    image = np.asarray(image, dtype=np.float64)
    out = np.stack([ndimage.correlate(ch, kernel, mode="nearest") for ch in image])
    return out[:, ::scale, ::scale]


def self_similar_image(
    size: int,
    kernel: np.ndarray,
    rng: np.random.Generator,
    scale: int = 2,
    levels: int = 3,
    channels: int = 1,
) -> np.ndarray:
    """Image whose statistics are stable under blur-then-downscale with ``kernel``.

    A dead-leaves image ``scale**levels`` times larger is pushed through the
    blur-downsample map ``levels`` times.
    """
    img = dead_leaves(size * scale**levels, rng, channels=channels)
    for _ in range(levels):
        img = blur_downsample(img, kernel, scale)
    return img
