"""
opmatch.restore - non-blind restoration with a known or learned operator.
"""

from .solvers import (
    map_tv,
    operator_norm_sq,
    restore,
    total_variation,
    transfer_function,
    wiener,
)
from .tiles import feather, halo_window, kernel_radius, restore_tiles, tile_starts

__all__ = [
    "wiener",
    "map_tv",
    "operator_norm_sq",
    "restore",
    "restore_tiles",
    "total_variation",
    "transfer_function",
    "tile_starts",
    "feather",
    "halo_window",
    "kernel_radius",
]
