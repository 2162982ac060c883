"""
opmatch.operators - the learnable forward-operator family.
"""

from .export import export_kernel, export_kernel_png, tile_kernels
from .forward import (
    DownscaleOperator,
    ForwardOperator,
    KernelGridOperator,
    LinearConvNetOperator,
    NoiseModel,
    OperatorVariant,
    UniformKernelOperator,
    apply,
    apply_image,
    build_operator,
    interpolate_kernels,
    load_operator,
    materialize_kernel,
    operator_from_dict,
    save_operator,
)
from .kernels import (
    Normalization,
    anisotropic_gaussian_kernel,
    box_kernel,
    build_kernel,
    dirac_kernel,
    gaussian_kernel,
    normalize_kernel,
    shift_kernel,
)
from .regularizers import (
    reg_center,
    reg_gaussian,
    reg_sparsity,
    reg_sum_to_one,
    regularization_loss,
)

__all__ = [
    # Operators
    "ForwardOperator",
    "UniformKernelOperator",
    "KernelGridOperator",
    "LinearConvNetOperator",
    "DownscaleOperator",
    "NoiseModel",
    "OperatorVariant",
    "apply",
    "apply_image",
    "materialize_kernel",
    "interpolate_kernels",
    "build_operator",
    "operator_from_dict",
    "save_operator",
    "load_operator",
    # Kernels
    "Normalization",
    "normalize_kernel",
    "dirac_kernel",
    "box_kernel",
    "gaussian_kernel",
    "anisotropic_gaussian_kernel",
    "shift_kernel",
    "build_kernel",
    # Regularizers
    "reg_center",
    "reg_sparsity",
    "reg_gaussian",
    "reg_sum_to_one",
    "regularization_loss",
    # Export
    "export_kernel",
    "export_kernel_png",
    "tile_kernels",
]
