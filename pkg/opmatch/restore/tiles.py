"""Tiled restoration with linear feathering in the overlap bands."""

from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np

from ..autodiff import no_grad
from ..core.config import RestoreConfig
from ..operators.forward import DownscaleOperator, ForwardOperator
from .solvers import _image, restore

logger = logging.getLogger(__name__)


def tile_starts(length: int, tile: int, overlap: int) -> List[int]:
    """Start offsets covering ``[0, length)``; the last tile is flush with the end."""
    if length <= tile:
        return [0]
    step = tile - overlap
    starts = list(range(0, length - tile + 1, step))
    if starts[-1] != length - tile:
        starts.append(length - tile)
    return starts


def feather(length: int, overlap: int, ramp_start: bool, ramp_end: bool) -> np.ndarray:
    """1-D blend weights, ramping linearly across ``overlap`` at inner tile edges."""
    w = np.ones(length)
    if overlap <= 0:
        return w
    ramp = np.arange(1, overlap + 1) / (overlap + 1)
    if ramp_start:
        w[:overlap] = np.minimum(w[:overlap], ramp)
    if ramp_end:
        w[-overlap:] = np.minimum(w[-overlap:], ramp[::-1])
    return w


def kernel_radius(op: ForwardOperator) -> int:
    """Half-width of the operator's support in input pixels."""
    with no_grad():
        kernels = op.regularized_kernels()
    return max(max(k.shape[-2:]) for k in kernels) // 2


def halo_window(start: int, tile: int, halo: int, length: int) -> Tuple[int, int]:
    """``[lo, hi)`` around a tile, clamped to the image."""
    lo = max(0, start - halo)
    hi = min(length, start + tile + halo)
    return lo, hi


def restore_tiles(
    y,
    op: ForwardOperator,
    cfg: Optional[RestoreConfig] = None,
    tile: Optional[int] = None,
    overlap: Optional[int] = None,
    halo: Optional[int] = None,
) -> np.ndarray:
    """Restore ``y`` tile by tile and blend.

    Every tile is solved on a window widened by ``halo`` pixels (at least the
    kernel radius) on each side that stays inside the image; only the tile
    itself is kept. Each window knows its place in the full frame, so
    spatially varying operators use the right kernels. Images smaller than a
    tile are restored in one piece.
    """
    cfg = cfg or RestoreConfig()
    tile = cfg.tile if tile is None else tile
    overlap = cfg.overlap if overlap is None else overlap
    if tile <= 2 * overlap:
        raise ValueError(f"tile ({tile}) must exceed 2*overlap ({2 * overlap})")
    img = _image(y)
    c, h, w = img.shape
    if h < tile or w < tile:
        logger.debug("image %dx%d smaller than tile %d, restoring in one piece", h, w, tile)
        return restore(img, op, cfg)

    s = op.scale if isinstance(op, DownscaleOperator) else 1
    halo = cfg.halo if halo is None else halo
    halo = max(halo, -(-kernel_radius(op) // s))
    out = np.zeros((c, h * s, w * s))
    weight = np.zeros((h * s, w * s))
    rows, cols = tile_starts(h, tile, overlap), tile_starts(w, tile, overlap)
    for r in rows:
        wr = feather(tile * s, overlap * s, r > 0, r + tile < h)
        r0, r1 = halo_window(r, tile, halo, h)
        for col in cols:
            wc = feather(tile * s, overlap * s, col > 0, col + tile < w)
            c0, c1 = halo_window(col, tile, halo, w)
            window = restore(img[:, r0:r1, c0:c1], op, cfg, (r0, c0), (h, w))
            dr, dc = (r - r0) * s, (col - c0) * s
            piece = window[:, dr : dr + tile * s, dc : dc + tile * s]
            blend = wr[:, None] * wc[None, :]
            out[:, r * s : (r + tile) * s, col * s : (col + tile) * s] += piece * blend
            weight[r * s : (r + tile) * s, col * s : (col + tile) * s] += blend
    logger.debug("restored %d tile(s) with a %d pixel halo", len(rows) * len(cols), halo)
    return out / weight
