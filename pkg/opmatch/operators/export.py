"""Kernel export: OPMT tensors and tiled 8-bit PNG previews."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image

from ..autodiff import no_grad, save_tensor

logger = logging.getLogger(__name__)

SEPARATOR_VALUE = 255


def _to_uint8(kernel: np.ndarray) -> np.ndarray:
    lo, hi = float(kernel.min()), float(kernel.max())
    if hi - lo <= 0:
        return np.zeros(kernel.shape, dtype=np.uint8)
    return np.round((kernel - lo) / (hi - lo) * 255.0).astype(np.uint8)


def tile_kernels(kernels: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    """Arrange a 2-D list of equally sized kernels with 1-px separators.

    Each kernel is min-max normalized on its own.
    """
    rows = len(kernels)
    cols = max(len(r) for r in kernels)
    kh, kw = np.asarray(kernels[0][0]).shape
    canvas = np.full(
        (rows * (kh + 1) + 1, cols * (kw + 1) + 1), SEPARATOR_VALUE, dtype=np.uint8
    )
    for i, row in enumerate(kernels):
        for j, kernel in enumerate(row):
            r0, c0 = 1 + i * (kh + 1), 1 + j * (kw + 1)
            canvas[r0 : r0 + kh, c0 : c0 + kw] = _to_uint8(np.asarray(kernel, dtype=np.float64))
    return canvas


def operator_kernel_rows(op) -> list:
    """Kernels of an operator laid out for preview: one row per grid row, channels side by side."""
    from .forward import KernelGridOperator

    with no_grad():
        if isinstance(op, KernelGridOperator):
            nodes = op.node_kernels().data
            return [[k for node in row for k in node] for row in nodes]
        return [list(op.materialize_kernel().data)]


def export_kernel_png(op_or_kernels, path: Union[str, Path], scale: int = 8) -> Path:
    """Write a nearest-neighbour upscaled PNG preview of the kernels."""
    if isinstance(op_or_kernels, np.ndarray):
        arr = op_or_kernels
        rows = [[arr]] if arr.ndim == 2 else [list(arr)]
    elif isinstance(op_or_kernels, (list, tuple)):
        rows = [list(r) if isinstance(r, (list, tuple)) else [r] for r in op_or_kernels]
    else:
        rows = operator_kernel_rows(op_or_kernels)
    canvas = tile_kernels(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = Image.fromarray(canvas)
    if scale > 1:
        size = (canvas.shape[1] * scale, canvas.shape[0] * scale)
        image = image.resize(size, Image.Resampling.NEAREST)
    image.save(path)
    logger.debug("wrote kernel preview %s", path)
    return path


def export_kernel(op, directory: Union[str, Path], at: Optional[tuple] = None) -> Path:
    """Write ``kernel.opmt`` (materialized kernel) and ``kernel.png`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with no_grad():
        if at is None and getattr(op, "needs_coords", False):
            h, w = op.image_extent
            at = ((h - 1) / 2.0, (w - 1) / 2.0)
        kernel = op.materialize_kernel(at).data
    save_tensor(directory / "kernel.opmt", kernel)
    export_kernel_png(op, directory / "kernel.png")
    return directory / "kernel.opmt"
