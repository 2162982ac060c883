"""
Image I/O
=========

PNG and PGM/PPM files in 8 or 16 bits map to ``[C, H, W]`` float arrays in
``[-1, 1]``. sRGB values are taken as they are (no linearization).
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..autodiff import Tensor
from ..core.errors import ImageFormatError

logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = {"PNG", "PPM"}  # Pillow reports PGM files as PPM
IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")


def _peak_for(image: Image.Image) -> float:
    if image.mode in ("I;16", "I;16B", "I;16L", "I"):
        return 65535.0
    return 255.0


def load_image(path: Union[str, Path]) -> Tensor:
    """Read an image as a ``[C, H, W]`` tensor in ``[-1, 1]``."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            if image.format not in SUPPORTED_FORMATS:
                raise ImageFormatError(f"{path}: unsupported image format {image.format}")
            image.load()
            peak = _peak_for(image)
            if image.mode in ("RGBA", "LA", "P"):
                image = image.convert("RGB" if image.mode != "LA" else "L")
            elif image.mode == "1":
                image = image.convert("L")
            arr = np.asarray(image, dtype=np.float64)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return Tensor(2.0 * arr / peak - 1.0)


def save_image(path: Union[str, Path], image, bit_depth: int = 8) -> Path:
    """Write a ``[C, H, W]`` (or ``[H, W]``) array in ``[-1, 1]``; values are clipped."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] not in (1, 3):
            raise ImageFormatError(f"cannot write {arr.shape[0]}-channel image")
        arr = arr[0] if arr.shape[0] == 1 else np.moveaxis(arr, 0, -1)
    peak = 255.0 if bit_depth == 8 else 65535.0
    scaled = np.round((np.clip(arr, -1.0, 1.0) + 1.0) * 0.5 * peak)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if bit_depth == 8:
        Image.fromarray(scaled.astype(np.uint8)).save(path)
    else:
        if scaled.ndim == 3:
            raise ImageFormatError("16-bit output supports single-channel images only")
        Image.fromarray(scaled.astype(np.uint16)).save(path)
    return path


def list_images(directory: Union[str, Path]) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
