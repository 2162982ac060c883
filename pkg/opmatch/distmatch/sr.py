"""
Single-image super-resolution kernel learning
=============================================

Natural images look alike across scales, so patches of a low-resolution
image ``y`` follow the same law as patches of ``(y * k) subsampled by s``.
The prior is trained on patches of ``y``; the clean source is ``y`` itself,
cut into patches ``s`` times larger, and a downscaling operator is matched.
Without the extra downscale the problem is pure deblurring of ``y`` by
itself and the identity kernel is the trivial solution.
"""

from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np

from ..autodiff import no_grad
from ..core.config import MatchConfig, PriorConfig, SRConfig
from ..core.errors import CorpusError
from ..data.patches import PatchSource, patch_grid
from ..operators import apply_image
from ..operators.forward import (
    DownscaleOperator,
    ForwardOperator,
    LinearConvNetOperator,
    NoiseModel,
    UniformKernelOperator,
)
from ..operators.kernels import dirac_kernel
from .matching import MatchState, Recorder, match
from .prior import train_prior

logger = logging.getLogger(__name__)


def _count(image: np.ndarray, size: int, stride: int) -> int:
    try:
        return len(patch_grid(image.shape[1], image.shape[2], size, stride))
    except CorpusError:
        return 0


def sr_operator_init(
    cfg: SRConfig, channels: int, rng: np.random.Generator, dtype=np.float64
) -> ForwardOperator:
    """Initial operator: dirac-initialised inner blur, wrapped in a downscale when enabled."""
    if cfg.inner == "linear_net":
        inner: ForwardOperator = LinearConvNetOperator(channels, rng=rng, dtype=dtype)
    else:
        kernel = dirac_kernel(cfg.kernel_size) + 1e-4
        inner = UniformKernelOperator(kernel, channels, dtype=dtype)
    if not cfg.downscale:
        return inner
    return DownscaleOperator(inner, cfg.scale, NoiseModel(0.0, dtype=dtype), dtype)


def match_sr(
    image,
    cfg: Optional[SRConfig] = None,
    prior_cfg: Optional[PriorConfig] = None,
    match_cfg: Optional[MatchConfig] = None,
    rng: Optional[np.random.Generator] = None,
    seed: int = 0,
    recorder: Optional[Recorder] = None,
) -> Tuple[ForwardOperator, MatchState]:
    """Learn the downscaling kernel of a single ``[C, H, W]`` low-resolution image."""
    cfg = cfg or SRConfig()
    prior_cfg = prior_cfg or PriorConfig()
    match_cfg = match_cfg or MatchConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    img = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if img.ndim == 2:
        img = img[None]

    scale = cfg.scale if cfg.downscale else 1
    lr_size = cfg.patch_size
    hr_size = cfg.patch_size * scale
    n_lr = _count(img, lr_size, cfg.stride)
    n_hr = _count(img, hr_size, cfg.stride)
    if min(n_lr, n_hr) < cfg.min_patches:
        raise CorpusError(
            f"image {img.shape[1]}x{img.shape[2]} yields {n_lr} patch(es) at {lr_size}px and "
            f"{n_hr} at {hr_size}px; {cfg.min_patches} are needed at both scales"
        )

    targets = PatchSource([img], lr_size, cfg.stride, ["lr"], with_coords=False)
    sources = PatchSource([img], hr_size, cfg.stride, ["lr"], with_coords=False)
    logger.info("SR: %d target patch(es), %d source patch(es), scale %d", n_lr, n_hr, scale)

    teacher = train_prior(targets, prior_cfg, rng, seed=seed)
    op_init = sr_operator_init(cfg, img.shape[0], rng)
    return match(teacher, sources, op_init, match_cfg, rng, recorder)


def synthesize_pairs(
    op: ForwardOperator,
    images: List[np.ndarray],
    rng: Optional[np.random.Generator] = None,
    noiseless: bool = False,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Degrade clean images with a learned operator to build paired data."""
    rng = rng if rng is not None else np.random.default_rng(0)
    pairs = []
    with no_grad():
        for img in images:
            clean = np.asarray(getattr(img, "data", img), dtype=np.float64)
            pairs.append((clean, apply_image(op, clean, rng, noiseless=noiseless)))
    return pairs
