"""
opmatch.autodiff - dense tensors with reverse-mode differentiation.
"""

from .tensor import (
    Tape,
    Tensor,
    as_tensor,
    backward,
    concat,
    is_grad_enabled,
    no_grad,
    stack,
    tensor,
    where,
    zero_grad,
)
from .functional import (
    PaddingMode,
    conv2d,
    depthwise_conv2d,
    flatten,
    interpolate_bilinear,
    linear,
    pad2d,
)
from .gradcheck import gradcheck, numerical_gradient, relative_error
from .optim import SGD, Adam, Optimizer, warmup_inverse_sqrt
from .serialization import (
    decode_tensor,
    encode_tensor,
    load_archive,
    load_tensor,
    save_archive,
    save_tensor,
)

__all__ = [
    # Tensors and tape
    "Tensor",
    "Tape",
    "tensor",
    "as_tensor",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "zero_grad",
    "concat",
    "stack",
    "where",
    # Spatial primitives
    "PaddingMode",
    "conv2d",
    "depthwise_conv2d",
    "linear",
    "pad2d",
    "interpolate_bilinear",
    "flatten",
    # Checks
    "gradcheck",
    "numerical_gradient",
    "relative_error",
    # Optimizers
    "Optimizer",
    "Adam",
    "SGD",
    "warmup_inverse_sqrt",
    # OPMT format
    "encode_tensor",
    "decode_tensor",
    "save_tensor",
    "load_tensor",
    "save_archive",
    "load_archive",
]
