"""
Kernel metrics
==============

Blind estimates are only defined up to small shifts (and, with the
correlation convention, a 180 degree flip). ``kernel_psnr`` removes the
shift by centring mass; ``kernel_ncc`` searches shifts (and the flip)
explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .image import psnr_from_mse


def _kernel(k) -> np.ndarray:
    k = np.asarray(getattr(k, "data", k), dtype=np.float64)
    if k.ndim == 3 and k.shape[0] == 1:
        k = k[0]
    if k.ndim == 1:
        k = k[None]
    if k.ndim != 2:
        raise ValueError(f"kernel must be 2-D, got shape {k.shape}")
    return k


def pad_to(k: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Zero-pad ``k`` into the middle of a ``shape`` canvas."""
    h, w = shape
    out = np.zeros((h, w))
    top, left = (h - k.shape[0]) // 2, (w - k.shape[1]) // 2
    out[top : top + k.shape[0], left : left + k.shape[1]] = k
    return out


def center_of_mass_shift(k: np.ndarray) -> np.ndarray:
    """Roll ``k`` by the integer offset that brings its mass centre to the canvas centre."""
    total = k.sum()
    if abs(total) < 1e-300:
        return k
    com = np.array(ndimage.center_of_mass(np.abs(k)))
    target = (np.array(k.shape) - 1) / 2.0
    shift = np.rint(target - com).astype(int)
    return np.roll(k, tuple(shift), axis=(0, 1))


def kernel_psnr(k_hat, k_true, pad: int = 25) -> float:
    """PSNR between mass-centred kernels on a ``pad x pad`` canvas; peak ``max(k_true)``."""
    a, b = _kernel(k_hat), _kernel(k_true)
    size = (max(pad, a.shape[0], b.shape[0]), max(pad, a.shape[1], b.shape[1]))
    a = center_of_mass_shift(pad_to(a, size))
    b = center_of_mass_shift(pad_to(b, size))
    peak = float(b.max())
    return psnr_from_mse(float(np.mean((a - b) ** 2)), peak if peak > 0 else 1.0)


@dataclass
class KernelAlignment:
    ncc: float
    shift: Tuple[int, int]
    flipped: bool


def _unit(k: np.ndarray) -> np.ndarray:
    k = k - k.mean()
    norm = np.linalg.norm(k)
    return k / norm if norm > 0 else k


def kernel_alignment(k_hat, k_true, max_shift: int = 5, flip: bool = True) -> KernelAlignment:
    """Best normalised cross-correlation over integer shifts within ``max_shift``.

    Both kernels are placed on a common canvas with ``max_shift`` of zero
    margin, mean-removed and scaled to unit norm.
    """
    a, b = _kernel(k_hat), _kernel(k_true)
    size = (
        max(a.shape[0], b.shape[0]) + 2 * max_shift,
        max(a.shape[1], b.shape[1]) + 2 * max_shift,
    )
    target = _unit(pad_to(b, size))
    variants = [(False, a)] + ([(True, a[::-1, ::-1])] if flip else [])
    best = KernelAlignment(-np.inf, (0, 0), False)
    for flipped, k in variants:
        moved = _unit(pad_to(k, size))
        for dy in range(-max_shift, max_shift + 1):
            for dx in range(-max_shift, max_shift + 1):
                value = float(np.sum(np.roll(moved, (dy, dx), axis=(0, 1)) * target))
                if value > best.ncc + 1e-12:
                    best = KernelAlignment(value, (dy, dx), flipped)
    best.ncc = float(np.clip(best.ncc, -1.0, 1.0))
    return best


def kernel_ncc(k_hat, k_true, max_shift: int = 5, flip: bool = True) -> float:
    return kernel_alignment(k_hat, k_true, max_shift, flip).ncc
