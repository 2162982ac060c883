"""Image quality metrics on ``[C, H, W]`` (or ``[H, W]``) arrays."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..core.errors import ShapeError

PSNR_CAP = 99.0
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def to_unit_range(image) -> np.ndarray:
    """``[-1, 1]`` -> ``[0, 1]``."""
    return (np.asarray(getattr(image, "data", image), dtype=np.float64) + 1.0) * 0.5


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse <= 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(peak**2 / mse), PSNR_CAP))


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``, capped at 99 dB."""
    a, b = _pair(a, b)
    return psnr_from_mse(float(np.mean((a - b) ** 2)), peak)


def luma(image: np.ndarray) -> np.ndarray:
    """BT.601 luma of a ``[3, H, W]`` image; single-channel images pass through."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2 or image.shape[0] == 1:
        return image.reshape(image.shape[-2:])
    if image.shape[0] != 3:
        raise ShapeError(f"luma needs 1 or 3 channels, got {image.shape[0]}")
    return np.tensordot(LUMA_WEIGHTS, image, axes=1)


def y_psnr(a, b, peak: float = 1.0) -> float:
    a, b = _pair(a, b)
    return psnr(luma(a), luma(b), peak)


def _ssim_map(a: np.ndarray, b: np.ndarray, peak: float) -> np.ndarray:
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2

    def blur(x):
        return ndimage.gaussian_filter(x, SSIM_SIGMA, mode="reflect", truncate=SSIM_RADIUS / SSIM_SIGMA)

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, peak: float = 1.0) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Only windows lying fully inside the image contribute; channels are
    averaged.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    r = SSIM_RADIUS
    if a.shape[1] <= 2 * r or a.shape[2] <= 2 * r:
        raise ShapeError(f"SSIM needs images larger than {2 * r + 1}px, got {a.shape[1:]}")
    values = [_ssim_map(a[c], b[c], peak)[r:-r, r:-r].mean() for c in range(a.shape[0])]
    return float(np.clip(np.mean(values), -1.0, 1.0))
