"""
Shared data structures
======================

``PatchBatch`` is the unit every stage exchanges: pixels plus where in the
source image each patch came from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import Tensor, as_tensor, concat
from .errors import ShapeError


# ============================================================================
# ENUMERATIONS
# ============================================================================


class Split(str, Enum):
    """Disjoint partitions of a corpus."""

    CLEAN = "clean"
    CORRUPTED = "corrupted"
    TEST = "test"

    def __str__(self) -> str:
        return self.value


# ============================================================================
# PATCH BATCH
# ============================================================================


def normalized_coordinate(pixel, extent: int):
    """Pixel index -> ``[-1, 1]`` along an axis of ``extent`` pixels."""
    if extent <= 1:
        return np.zeros_like(np.asarray(pixel, dtype=np.float64))
    return 2.0 * np.asarray(pixel, dtype=np.float64) / (extent - 1) - 1.0


def pixel_coordinate(coord, extent: int):
    """Inverse of :func:`normalized_coordinate`."""
    return (np.asarray(coord, dtype=np.float64) + 1.0) * 0.5 * (extent - 1)


@dataclass
class PatchBatch:
    """
    A batch of image patches.

    ``pixels`` is ``[B, C, h, w]``. ``coords`` holds each patch centre in
    normalized image coordinates (row, col) in ``[-1, 1]``. ``positions``
    (top-left pixel) and ``extents`` (full image height, width) are kept when
    the patches were cut from a known image; they let positional channels
    vary across the patch.
    """

    pixels: Tensor
    coords: Optional[np.ndarray] = None
    source_ids: List[str] = field(default_factory=list)
    positions: Optional[np.ndarray] = None
    extents: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pixels = as_tensor(self.pixels)
        if self.pixels.ndim != 4:
            raise ShapeError(f"patch pixels must be [B,C,h,w], got {self.pixels.shape}")
        b = self.pixels.shape[0]
        for name in ("coords", "positions", "extents"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != (b, 2):
                raise ShapeError(f"{name} must be [{b}, 2], got {value.shape}")
            setattr(self, name, value)
        if self.coords is not None and np.any(np.abs(self.coords) > 1.0 + 1e-9):
            raise ValueError("patch coordinates must lie in [-1, 1]")

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[1]

    @property
    def patch_size(self) -> Tuple[int, int]:
        return self.pixels.shape[2], self.pixels.shape[3]

    @property
    def has_coords(self) -> bool:
        return self.coords is not None

    def pixel_grid(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-pixel normalized (row, col) coordinates, each ``[B, h, w]``.

        Falls back to the constant patch centre when the patch origin is
        unknown.
        """
        if self.coords is None:
            raise ShapeError("patch batch carries no coordinates")
        b = len(self)
        h, w = self.patch_size
        if self.positions is None or self.extents is None:
            rows = np.broadcast_to(self.coords[:, 0, None, None], (b, h, w))
            cols = np.broadcast_to(self.coords[:, 1, None, None], (b, h, w))
            return rows.copy(), cols.copy()
        rows = np.empty((b, h, w))
        cols = np.empty((b, h, w))
        for i in range(b):
            r = normalized_coordinate(self.positions[i, 0] + np.arange(h), int(self.extents[i, 0]))
            c = normalized_coordinate(self.positions[i, 1] + np.arange(w), int(self.extents[i, 1]))
            rows[i] = r[:, None]
            cols[i] = c[None, :]
        return rows, cols

    def positional_channels(self) -> np.ndarray:
        """``[B, 2, h, w]`` coordinate ramps for conditioning."""
        rows, cols = self.pixel_grid()
        return np.stack([rows, cols], axis=1).astype(self.pixels.dtype)

    def conditioning(self) -> Optional[Tensor]:
        if self.coords is None:
            return None
        return Tensor._wrap(self.positional_channels())

    def with_pixels(self, pixels: Tensor) -> "PatchBatch":
        """Same provenance, new pixel content (spatial size must match for coords)."""
        return PatchBatch(
            pixels=pixels,
            coords=self.coords,
            source_ids=list(self.source_ids),
            positions=self.positions,
            extents=self.extents,
        )

    def without_coords(self) -> "PatchBatch":
        return PatchBatch(pixels=self.pixels, source_ids=list(self.source_ids))

    def subset(self, index: Sequence[int]) -> "PatchBatch":
        index = np.asarray(index, dtype=int)

        def pick(a):
            return None if a is None else a[index]

        return PatchBatch(
            pixels=Tensor._wrap(self.pixels.data[index]),
            coords=pick(self.coords),
            source_ids=[self.source_ids[i] for i in index] if self.source_ids else [],
            positions=pick(self.positions),
            extents=pick(self.extents),
        )

    def to_dict(self) -> Dict[str, Any]:
        """Metadata summary for logs and manifests."""
        return {
            "batch": len(self),
            "channels": self.channels,
            "patch_size": list(self.patch_size),
            "has_coords": self.has_coords,
            "sources": sorted(set(self.source_ids)),
        }


def concat_batches(batches: Sequence[PatchBatch]) -> PatchBatch:
    if not batches:
        raise ValueError("no batches to concatenate")

    def join(name):
        values = [getattr(b, name) for b in batches]
        if any(v is None for v in values):
            return None
        return np.concatenate(values, axis=0)

    return PatchBatch(
        pixels=concat([b.pixels for b in batches], axis=0),
        coords=join("coords"),
        source_ids=[s for b in batches for s in b.source_ids],
        positions=join("positions"),
        extents=join("extents"),
    )
