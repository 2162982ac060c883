"""
opmatch.data - image I/O, patches and synthetic degraded corpora.
"""

from ..core.datatypes import PatchBatch, Split, concat_batches
from .corpus import Corpus, check_disjoint, generate_corpus, generate_split, image_rng
from .io import list_images, load_image, save_image
from .motion import random_motion_kernel
from .patches import (
    PatchSource,
    assemble_patches,
    extract_patches,
    patch_grid,
    randomize_coords,
)
from .synthetic import blur_downsample, dead_leaves, pink_noise, self_similar_image

__all__ = [
    "PatchBatch",
    "PatchSource",
    "Split",
    "concat_batches",
    "extract_patches",
    "assemble_patches",
    "patch_grid",
    "randomize_coords",
    "load_image",
    "save_image",
    "list_images",
    "random_motion_kernel",
    "dead_leaves",
    "pink_noise",
    "self_similar_image",
    "blur_downsample",
    "Corpus",
    "generate_corpus",
    "generate_split",
    "check_disjoint",
    "image_rng",
]
