"""
Explicit blur kernels and the kernel normalization map.
"""

from __future__ import annotations

from enum import Enum
from typing import Optional, Tuple

import numpy as np

from ..autodiff import Tensor
from ..core.config import KernelSpec

_MASS_FLOOR = 1e-12


class Normalization(str, Enum):
    HARD = "hard_sum_to_one"
    SOFT = "soft_penalty"
    NONE = "none"

    def __str__(self) -> str:
        return self.value


def normalize_kernel(raw: Tensor, mode: Normalization | str = Normalization.HARD) -> Tensor:
    """Map raw parameters to kernels over the last two axes.

    ``hard_sum_to_one``: ``|raw| / sum|raw|``; ``soft_penalty``: ``|raw|``
    (the sum is left to the sum-to-one regularizer); ``none``: identity.
    """
    mode = Normalization(mode)
    if mode is Normalization.NONE:
        return raw
    magnitude = raw.abs()
    if mode is Normalization.SOFT:
        return magnitude
    return magnitude / (magnitude.sum(axis=(-2, -1), keepdims=True) + _MASS_FLOOR)


def dirac_kernel(size: int) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def box_kernel(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / (size * size))


def _grid(size: int) -> Tuple[np.ndarray, np.ndarray]:
    c = (size - 1) / 2.0
    ax = np.arange(size) - c
    return np.meshgrid(ax, ax, indexing="ij")


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Sampled isotropic Gaussian normalized to sum 1."""
    rr, cc = _grid(size)
    k = np.exp(-(rr**2 + cc**2) / (2.0 * sigma**2))
    return k / k.sum()


def anisotropic_gaussian_kernel(
    size: int, sigma_x: float, sigma_y: float, theta: float = 0.0
) -> np.ndarray:
    """Sampled Gaussian with principal std-devs ``sigma_x``/``sigma_y`` rotated by ``theta`` (radians)."""
    rr, cc = _grid(size)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    cov = rot @ np.diag([sigma_x**2, sigma_y**2]) @ rot.T
    inv = np.linalg.inv(cov)
    # (x, y) = (col, row)
    q = inv[0, 0] * cc**2 + 2 * inv[0, 1] * cc * rr + inv[1, 1] * rr**2
    k = np.exp(-0.5 * q)
    return k / k.sum()


def shift_kernel(kernel: np.ndarray, shift: Tuple[int, int]) -> np.ndarray:
    """Integer shift with zero fill; content leaving the support is dropped."""
    dy, dx = int(shift[0]), int(shift[1])
    out = np.zeros_like(kernel)
    h, w = kernel.shape[-2:]
    src_r = slice(max(0, -dy), min(h, h - dy))
    dst_r = slice(max(0, dy), min(h, h + dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_c = slice(max(0, dx), min(w, w + dx))
    out[..., dst_r, dst_c] = kernel[..., src_r, src_c]
    return out


def build_kernel(spec: KernelSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Materialize a ``KernelSpec`` into a 2-D array."""
    if spec.kind == "dirac":
        k = dirac_kernel(spec.size)
    elif spec.kind == "gaussian":
        k = gaussian_kernel(spec.size, spec.sigma)
    elif spec.kind == "anisotropic_gaussian":
        k = anisotropic_gaussian_kernel(spec.size, spec.sigma_x, spec.sigma_y, spec.theta)
    elif spec.kind == "box":
        k = box_kernel(spec.size)
    elif spec.kind == "motion":
        from ..data.motion import random_motion_kernel

        k = random_motion_kernel(spec.size, spec.steps, rng or np.random.default_rng(0))
    else:
        from ..autodiff import load_tensor

        k = np.asarray(load_tensor(spec.path), dtype=np.float64)
        if k.ndim == 3:
            k = k[0]
    if any(spec.shift):
        k = shift_kernel(k, spec.shift)
    return k


def anisotropic_field(
    grid_shape: Tuple[int, int], size: int, rng: np.random.Generator
) -> np.ndarray:
    """``[Gy, Gx, size, size]`` distinct anisotropic Gaussians, one per node."""
    gy, gx = grid_shape
    out = np.zeros((gy, gx, size, size))
    limit = max(size / 6.0, 0.6)
    for i in range(gy):
        for j in range(gx):
            sx = rng.uniform(0.5, limit)
            sy = rng.uniform(0.5, limit)
            theta = rng.uniform(0.0, np.pi)
            out[i, j] = anisotropic_gaussian_kernel(size, sx, sy, theta)
    return out
