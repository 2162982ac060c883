"""Per-image and kernel metric tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..core.config import MetricsConfig
from .image import psnr, ssim, to_unit_range, y_psnr
from .kernel import kernel_alignment, kernel_psnr

IMAGE_COLUMNS = ["image_id", "psnr", "y_psnr", "ssim"]
KERNEL_COLUMNS = ["kernel_id", "kernel_psnr", "kernel_ncc", "aligned_shift", "flipped"]


@dataclass
class MetricReport:
    """Rows of image metrics plus, when the truth is known, kernel metrics.

    Images are given in ``[-1, 1]`` and scored in ``[0, 1]``.
    """

    config: MetricsConfig = field(default_factory=MetricsConfig)
    images: List[Dict[str, Any]] = field(default_factory=list)
    kernels: List[Dict[str, Any]] = field(default_factory=list)

    def add_image(self, image_id: str, restored, reference) -> Dict[str, Any]:
        a, b = to_unit_range(restored), to_unit_range(reference)
        peak = self.config.peak
        row = {
            "image_id": image_id,
            "psnr": psnr(a, b, peak),
            "y_psnr": y_psnr(a, b, peak),
            "ssim": ssim(a, b, peak),
        }
        self.images.append(row)
        return row

    def add_kernel(self, kernel_id: str, k_hat, k_true) -> Dict[str, Any]:
        align = kernel_alignment(
            k_hat, k_true, self.config.ncc_max_shift, self.config.flip
        )
        row = {
            "kernel_id": kernel_id,
            "kernel_psnr": kernel_psnr(k_hat, k_true, self.config.kernel_pad),
            "kernel_ncc": align.ncc,
            "aligned_shift": f"{align.shift[0]},{align.shift[1]}",
            "flipped": align.flipped,
        }
        self.kernels.append(row)
        return row

    def _mean(self, rows: List[Dict[str, Any]], key: str) -> Optional[float]:
        return float(np.mean([r[key] for r in rows])) if rows else None

    @property
    def psnr(self) -> Optional[float]:
        return self._mean(self.images, "psnr")

    @property
    def y_psnr(self) -> Optional[float]:
        return self._mean(self.images, "y_psnr")

    @property
    def ssim(self) -> Optional[float]:
        return self._mean(self.images, "ssim")

    @property
    def kernel_psnr(self) -> Optional[float]:
        return self._mean(self.kernels, "kernel_psnr")

    @property
    def kernel_ncc(self) -> Optional[float]:
        return self._mean(self.kernels, "kernel_ncc")

    def image_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.images, columns=IMAGE_COLUMNS)

    def kernel_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.kernels, columns=KERNEL_COLUMNS)

    def summary(self) -> Dict[str, Optional[float]]:
        return {
            "psnr": self.psnr,
            "y_psnr": self.y_psnr,
            "ssim": self.ssim,
            "kernel_psnr": self.kernel_psnr,
            "kernel_ncc": self.kernel_ncc,
        }

    def write(self, directory: Union[str, Path]) -> Tuple[Path, Path]:
        """``metrics.csv`` (one row per image) and ``kernel_metrics.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        images = directory / "metrics.csv"
        kernels = directory / "kernel_metrics.csv"
        self.image_frame().to_csv(images, index=False, float_format="%.6f")
        self.kernel_frame().to_csv(kernels, index=False, float_format="%.6f")
        return images, kernels
