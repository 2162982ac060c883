"""
Patch extraction and sampling
=============================

Patches are cut in raster order. Each keeps its top-left position and the
extent of its source image, so positional channels can be rebuilt at any
time and patches can be put back together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import Tensor
from ..core.datatypes import PatchBatch, normalized_coordinate
from ..core.errors import CorpusError, ShapeError

logger = logging.getLogger(__name__)


def _as_image(img) -> np.ndarray:
    arr = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"image must be [C,H,W] or [H,W], got shape {arr.shape}")
    return arr


def patch_grid(height: int, width: int, size: int, stride: int) -> List[Tuple[int, int]]:
    """Raster-order top-left corners of every full patch."""
    if size < 1 or stride < 1:
        raise ValueError(f"patch size and stride must be >= 1, got {size}, {stride}")
    if size > height or size > width:
        raise CorpusError(f"patch size {size} exceeds image extent {height}x{width}")
    rows = range(0, height - size + 1, stride)
    cols = range(0, width - size + 1, stride)
    return [(r, c) for r in rows for c in cols]


def patch_centers(positions: np.ndarray, size: int, extent: Tuple[int, int]) -> np.ndarray:
    """Normalized centre coordinates ``[N, 2]`` of patches at ``positions``."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    centre = positions + (size - 1) / 2.0
    return np.stack(
        [
            normalized_coordinate(centre[:, 0], extent[0]),
            normalized_coordinate(centre[:, 1], extent[1]),
        ],
        axis=1,
    )


def extract_patches(
    img,
    size: int,
    stride: int,
    with_coords: bool = True,
    source_id: str = "",
) -> PatchBatch:
    """Cut all ``size x size`` patches at ``stride`` from a ``[C, H, W]`` image."""
    arr = _as_image(img)
    _, h, w = arr.shape
    corners = patch_grid(h, w, size, stride)
    pixels = np.stack([arr[:, r : r + size, c : c + size] for r, c in corners])
    positions = np.asarray(corners, dtype=np.float64)
    extents = np.tile(np.array([h, w], dtype=np.float64), (len(corners), 1))
    return PatchBatch(
        pixels=Tensor._wrap(pixels),
        coords=patch_centers(positions, size, (h, w)) if with_coords else None,
        source_ids=[source_id] * len(corners),
        positions=positions,
        extents=extents,
    )


def assemble_patches(batch: PatchBatch, extent: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Average patches back into a ``[C, H, W]`` image using their positions.

    Pixels no patch covers are 0.
    """
    if batch.positions is None:
        raise ShapeError("patch batch carries no positions to assemble from")
    if extent is None:
        if batch.extents is None:
            raise ShapeError("assemble_patches needs an extent")
        extent = tuple(int(v) for v in batch.extents[0])
    h, w = batch.patch_size
    out = np.zeros((batch.channels,) + tuple(extent))
    weight = np.zeros(tuple(extent))
    for patch, (r, c) in zip(batch.pixels.data, batch.positions.astype(int)):
        out[:, r : r + h, c : c + w] += patch
        weight[r : r + h, c : c + w] += 1.0
    covered = weight > 0
    out[:, covered] /= weight[covered]
    return out


@dataclass
class PatchSource:
    """
    Random access to the patches of a set of images.

    ``coord_dropout`` replaces the conditioning position of that fraction of
    each batch by a uniformly drawn one; ``random_coords`` does so for every
    patch. Pixels are never changed.
    """

    images: List[np.ndarray]
    patch_size: int
    stride: int = 1
    image_ids: List[str] = field(default_factory=list)
    with_coords: bool = True

    def __post_init__(self):
        self.images = [_as_image(img) for img in self.images]
        if not self.images:
            raise CorpusError("patch source has no images")
        if not self.image_ids:
            self.image_ids = [f"img{i:04d}" for i in range(len(self.images))]
        if len(self.image_ids) != len(self.images):
            raise ValueError("image_ids must name every image")
        channels = {img.shape[0] for img in self.images}
        if len(channels) != 1:
            raise ShapeError(f"images disagree on channel count C: {sorted(channels)}")
        index = []
        for i, img in enumerate(self.images):
            for r, c in patch_grid(img.shape[1], img.shape[2], self.patch_size, self.stride):
                index.append((i, r, c))
        self._index = np.asarray(index, dtype=np.int64)
        logger.debug(
            "patch source: %d image(s), %d patch(es) of size %d",
            len(self.images),
            len(self._index),
            self.patch_size,
        )

    def __len__(self) -> int:
        return len(self._index)

    @property
    def channels(self) -> int:
        return self.images[0].shape[0]

    @property
    def image_extent(self) -> Tuple[int, int]:
        return self.images[0].shape[1], self.images[0].shape[2]

    def _gather(self, rows: np.ndarray) -> PatchBatch:
        s = self.patch_size
        entries = self._index[rows]
        pixels = np.stack([self.images[i][:, r : r + s, c : c + s] for i, r, c in entries])
        extents = np.array(
            [self.images[i].shape[1:] for i in entries[:, 0]], dtype=np.float64
        ).reshape(-1, 2)
        positions = entries[:, 1:].astype(np.float64)
        coords = None
        if self.with_coords:
            coords = np.concatenate(
                [patch_centers(p, s, e) for p, e in zip(positions, extents)], axis=0
            )
        return PatchBatch(
            pixels=Tensor._wrap(pixels),
            coords=coords,
            source_ids=[self.image_ids[i] for i in entries[:, 0]],
            positions=positions,
            extents=extents,
        )

    def batch(self, rows: Sequence[int]) -> PatchBatch:
        return self._gather(np.asarray(rows, dtype=np.int64))

    def all_patches(self) -> PatchBatch:
        return self._gather(np.arange(len(self)))

    def sample(
        self,
        batch_size: int,
        rng: np.random.Generator,
        coord_dropout: float = 0.0,
        random_coords: bool = False,
    ) -> PatchBatch:
        """Draw ``batch_size`` patches uniformly with replacement."""
        batch = self._gather(rng.integers(0, len(self), size=batch_size))
        fraction = 1.0 if random_coords else coord_dropout
        if fraction > 0 and batch.has_coords:
            batch = randomize_coords(batch, fraction, rng)
        return batch

    def epoch(self, batch_size: int, rng: np.random.Generator) -> Iterator[PatchBatch]:
        """One shuffled pass; the last short batch is kept."""
        order = rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            yield self._gather(order[start : start + batch_size])


def randomize_coords(batch: PatchBatch, fraction: float, rng: np.random.Generator) -> PatchBatch:
    """Move the conditioning of a random ``fraction`` of patches to uniform positions."""
    n = len(batch)
    mask = rng.random(n) < fraction
    if not np.any(mask):
        return batch
    h, w = batch.patch_size
    positions = batch.positions.copy()
    extents = batch.extents
    high = extents - np.array([h, w]) + 1
    positions[mask] = np.floor(rng.random((int(mask.sum()), 2)) * high[mask])
    coords = np.concatenate(
        [patch_centers(p, h, e) for p, e in zip(positions, extents)], axis=0
    )
    return PatchBatch(
        pixels=batch.pixels,
        coords=coords,
        source_ids=list(batch.source_ids),
        positions=positions,
        extents=extents,
    )
