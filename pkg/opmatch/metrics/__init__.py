"""
opmatch.metrics - image and kernel quality measures.
"""

from .image import PSNR_CAP, luma, psnr, ssim, to_unit_range, y_psnr
from .kernel import (
    KernelAlignment,
    center_of_mass_shift,
    kernel_alignment,
    kernel_ncc,
    kernel_psnr,
    pad_to,
)
from .report import MetricReport

__all__ = [
    "PSNR_CAP",
    "psnr",
    "y_psnr",
    "ssim",
    "luma",
    "to_unit_range",
    "kernel_psnr",
    "kernel_ncc",
    "kernel_alignment",
    "KernelAlignment",
    "center_of_mass_shift",
    "pad_to",
    "MetricReport",
]
