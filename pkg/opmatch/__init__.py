"""
opmatch
=======

Learns explicit image degradation operators (blur, spatially varying blur,
blur + downsampling) from unpaired clean and corrupted image sets by
matching flow-model distributions, and restores images non-blindly with
the learned operator.
"""

__version__ = "0.1.0"

# Core
from .core.config import RunConfig, load_config
from .core.errors import OpmatchError

# Engine
from .autodiff import Tensor, no_grad

# Operators
from .operators import (
    ForwardOperator,
    KernelGridOperator,
    LinearConvNetOperator,
    UniformKernelOperator,
    DownscaleOperator,
    apply,
    build_operator,
)

# Learning
from .flow import VelocityField
from .distmatch import match, match_sr, train_prior

# Restoration and evaluation
from .restore import map_tv, restore_tiles, wiener
from .metrics import MetricReport, kernel_ncc, psnr, ssim

__all__ = [
    # Core
    "RunConfig",
    "load_config",
    "OpmatchError",
    "Tensor",
    "no_grad",
    # Operators
    "ForwardOperator",
    "UniformKernelOperator",
    "KernelGridOperator",
    "LinearConvNetOperator",
    "DownscaleOperator",
    "apply",
    "build_operator",
    # Learning
    "VelocityField",
    "train_prior",
    "match",
    "match_sr",
    # Restoration
    "wiener",
    "map_tv",
    "restore_tiles",
    # Metrics
    "psnr",
    "ssim",
    "kernel_ncc",
    "MetricReport",
]
