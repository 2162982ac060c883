"""
Kernel shape regularizers
=========================

Each regularizer takes a kernel ``[kh, kw]`` or a stack ``[N, kh, kw]`` and
returns a differentiable scalar; stacks are averaged.
"""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

from ..autodiff import Tensor, as_tensor
from ..core.config import RegWeights

GAUSSIAN_SIGMA_FLOOR = 0.3


def _stacked(kernel) -> Tensor:
    k = as_tensor(kernel)
    if k.ndim == 2:
        return k.reshape(1, *k.shape)
    if k.ndim != 3:
        return k.reshape(-1, *k.shape[-2:])
    return k


def _pixel_axes(kh: int, kw: int) -> Tuple[np.ndarray, np.ndarray]:
    return np.arange(kh, dtype=np.float64).reshape(1, kh, 1), np.arange(
        kw, dtype=np.float64
    ).reshape(1, 1, kw)


def reg_center(kernel) -> Tensor:
    """Squared pixel distance between the centre of mass and the geometric centre.

    A kernel with zero total mass contributes 0.
    """
    k = _stacked(kernel)
    _, kh, kw = k.shape
    rows, cols = _pixel_axes(kh, kw)
    mass = k.sum(axis=(1, 2))
    empty = mass.data == 0
    safe = mass + empty.astype(mass.dtype)
    dr = (k * rows).sum(axis=(1, 2)) / safe - (kh - 1) / 2.0
    dc = (k * cols).sum(axis=(1, 2)) / safe - (kw - 1) / 2.0
    return ((dr.square() + dc.square()) * (~empty).astype(mass.dtype)).mean()


def reg_sparsity(kernel) -> Tensor:
    """Mean absolute kernel entry."""
    return _stacked(kernel).abs().mean()


def fitted_gaussian(kernel: np.ndarray) -> np.ndarray:
    """Isotropic Gaussian with the kernel's centre of mass and second moment."""
    k = np.asarray(kernel, dtype=np.float64)
    kh, kw = k.shape
    rows, cols = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
    mass = k.sum()
    p = k / mass if mass != 0 else np.full_like(k, 1.0 / k.size)
    r0, c0 = float((p * rows).sum()), float((p * cols).sum())
    var = float((p * ((rows - r0) ** 2 + (cols - c0) ** 2)).sum()) / 2.0
    sigma = max(np.sqrt(max(var, 0.0)), GAUSSIAN_SIGMA_FLOOR)
    g = np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def reg_gaussian(kernel) -> Tensor:
    """Squared L2 distance to the moment-matched isotropic Gaussian.

    The target Gaussian is recomputed from the current kernel but held
    constant for differentiation.
    """
    k = _stacked(kernel)
    mass = k.sum(axis=(1, 2), keepdims=True)
    safe = mass + (mass.data == 0).astype(mass.dtype)
    p = k / safe
    target = np.stack([fitted_gaussian(kernel_i) for kernel_i in k.data])
    return (p - target.astype(k.dtype)).square().sum(axis=(1, 2)).mean()


def reg_sum_to_one(kernel) -> Tensor:
    """``(sum k - 1)^2``."""
    k = _stacked(kernel)
    return (k.sum(axis=(1, 2)) - 1.0).square().mean()


REGULARIZERS = {
    "center": reg_center,
    "sparsity": reg_sparsity,
    "gaussian": reg_gaussian,
    "sum_to_one": reg_sum_to_one,
}


def regularization_loss(op, weights: RegWeights) -> Tuple[Tensor, Dict[str, float]]:
    """Weighted sum of the active regularizers over the operator's kernels.

    Returns the differentiable total and the unweighted value of every
    active term.
    """
    total = None
    values: Dict[str, float] = {}
    kernels = op.regularized_kernels()
    for name, fn in REGULARIZERS.items():
        weight = getattr(weights, name)
        if weight == 0:
            continue
        term = None
        for kernel in kernels:
            value = fn(kernel)
            term = value if term is None else term + value
        term = term * (1.0 / len(kernels))
        values[name] = float(term.data)
        total = term * weight if total is None else total + term * weight
    if total is None:
        total = Tensor._wrap(np.zeros((), dtype=op.dtype))
    return total, values
