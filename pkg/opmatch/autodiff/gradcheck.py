"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(
    fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-5
) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``tensor.data``."""
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = fn().item()
        flat[i] = original - eps
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """Max element-wise relative error, skipping entries where both sides are below ``floor``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = scale >= floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(analytic - numeric)[mask] / scale[mask]))


def gradcheck(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5
) -> Dict[int, float]:
    """Compare tape and finite-difference gradients for every input.

    ``fn`` must rebuild the graph from ``inputs`` on each call. Returns the
    relative error per input position.
    """
    for t in inputs:
        t.grad = None
    fn().backward()
    analytic = [None if t.grad is None else t.grad.copy() for t in inputs]
    errors = {}
    for pos, t in enumerate(inputs):
        numeric = numerical_gradient(fn, t, eps)
        a = analytic[pos] if analytic[pos] is not None else np.zeros_like(numeric)
        errors[pos] = relative_error(a, numeric)
    return errors
