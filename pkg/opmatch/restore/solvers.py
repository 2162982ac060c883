"""
Non-blind restoration
=====================

``wiener`` is a closed-form frequency-domain filter for uniform kernels with
circular boundaries. ``map_tv`` minimises

    ||A x - y||^2 / (2 sigma^2) + tv_weight * sum sqrt(|grad x|^2 + 1e-6)

by accelerated gradient descent through the autodiff engine, so it handles every
operator variant, including spatially varying and downscaling ones.
"""

from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np

from ..autodiff import PaddingMode, Tensor, no_grad, pad2d
from ..core.config import RestoreConfig
from ..core.errors import ShapeError
from ..operators.forward import (
    DownscaleOperator,
    ForwardOperator,
    KernelGridOperator,
)

logger = logging.getLogger(__name__)

SIGNAL_POWER_FLOOR = 1e-6
TV_EPS = 1e-6
SIGMA_FLOOR = 1e-3
MAX_FAILURES = 10
POWER_ITERATIONS = 20
# power iteration approaches the top eigenvalue from below
LIPSCHITZ_MARGIN = 1.05
_TRANSFER_FLOOR = 1e-12


def _image(y) -> np.ndarray:
    arr = np.asarray(getattr(y, "data", y), dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"image must be [C,H,W] or [H,W], got shape {arr.shape}")
    return arr


def transfer_function(kernel: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Frequency response of circular correlation with ``kernel`` on ``shape``."""
    kh, kw = kernel.shape
    h, w = shape
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kh}x{kw} larger than image {h}x{w}")
    padded = np.zeros((h, w))
    # correlation == convolution with the flipped kernel, centred on the origin
    padded[:kh, :kw] = kernel[::-1, ::-1]
    padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(padded)


def wiener(y, kernel, sigma: float) -> np.ndarray:
    """Per-channel Wiener deconvolution ``conj(K) Y / (|K|^2 + sigma^2 / P)``.

    ``P`` is the mean power of ``y`` (clipped below at 1e-6).
    """
    img = _image(y)
    k = np.asarray(getattr(kernel, "data", kernel), dtype=np.float64)
    if k.ndim == 2:
        k = np.broadcast_to(k, (img.shape[0],) + k.shape)
    if k.shape[0] != img.shape[0]:
        raise ShapeError(f"kernel has {k.shape[0]} channel(s), image has {img.shape[0]}")
    out = np.empty_like(img)
    for c in range(img.shape[0]):
        transfer = transfer_function(k[c], img.shape[1:])
        spectrum = np.fft.fft2(img[c])
        power = max(float(np.mean(img[c] ** 2)), SIGNAL_POWER_FLOOR)
        denom = np.abs(transfer) ** 2 + sigma**2 / power + _TRANSFER_FLOOR
        out[c] = np.real(np.fft.ifft2(np.conj(transfer) * spectrum / denom))
    return out


def total_variation(x: Tensor) -> Tensor:
    """Smoothed isotropic TV of ``[B, C, H, W]`` with replicate boundary."""
    xp = pad2d(x, (0, 1, 0, 1), PaddingMode.REPLICATE)
    base = xp[:, :, :-1, :-1]
    dx = xp[:, :, :-1, 1:] - base
    dy = xp[:, :, 1:, :-1] - base
    return (dx.square() + dy.square() + TV_EPS).sqrt().sum()


def _initial_estimate(y: np.ndarray, op: ForwardOperator) -> np.ndarray:
    if isinstance(op, DownscaleOperator):
        s = op.scale
        return np.repeat(np.repeat(y, s, axis=1), s, axis=2)
    return y.copy()


def operator_norm_sq(
    op: ForwardOperator,
    shape: Tuple[int, ...],
    origin: Tuple[int, int] = (0, 0),
    extent: Optional[Tuple[int, int]] = None,
) -> float:
    """Largest eigenvalue of ``A^T A`` on ``[C, H, W]`` inputs by power iteration."""
    v = np.random.default_rng(0).standard_normal((1,) + tuple(shape)).astype(op.dtype)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(POWER_ITERATIONS):
        vt = Tensor(v, requires_grad=True)
        (op.forward_image(vt, origin, extent).square().sum() * 0.5).backward()
        norm = float(np.linalg.norm(vt.grad))
        if norm == 0.0:
            return 0.0
        estimate, v = norm, vt.grad / norm
    return estimate


def map_tv(
    y,
    op: ForwardOperator,
    cfg: Optional[RestoreConfig] = None,
    origin: Tuple[int, int] = (0, 0),
    extent: Optional[Tuple[int, int]] = None,
    history: Optional[List[float]] = None,
) -> np.ndarray:
    """MAP estimate under a smoothed-TV prior by accelerated gradient descent.

    The step is ``step_size / L`` with ``L`` the Lipschitz constant of the
    objective's gradient: the data part from a power iteration on the
    operator, the TV part from its smoothing floor. Nesterov momentum is
    restarted whenever a step would raise the objective, so accepted values
    (appended to ``history``) never increase. Iteration stops once no pixel
    moves by more than ``tol``, or after ``iterations`` gradient steps.

    ``origin``/``extent`` place ``y`` within a larger frame (output-resolution
    pixels) for spatially varying operators. The operator's parameters
    receive no gradients.
    """
    cfg = cfg or RestoreConfig()
    y_arr = _image(y)
    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else op.sigma
    sigma = max(sigma, SIGMA_FLOOR)
    inv_two_var = 1.0 / (2.0 * sigma**2)
    scale = op.scale if isinstance(op, DownscaleOperator) else 1
    frame_origin = (origin[0] * scale, origin[1] * scale)
    frame_extent = None if extent is None else (extent[0] * scale, extent[1] * scale)
    target = Tensor._wrap(y_arr[None].astype(op.dtype))

    def objective(x: Tensor) -> Tensor:
        residual = op.forward_image(x, frame_origin, frame_extent) - target
        value = residual.square().sum() * inv_two_var
        if cfg.tv_weight > 0:
            value = value + total_variation(x) * cfg.tv_weight
        return value

    def value_of(x: np.ndarray) -> float:
        with no_grad():
            return float(objective(Tensor._wrap(x)).data)

    with op.frozen():
        x = _initial_estimate(y_arr, op)[None].astype(op.dtype)
        lipschitz = operator_norm_sq(op, x.shape[1:], frame_origin, frame_extent) / sigma**2
        lipschitz = LIPSCHITZ_MARGIN * lipschitz + cfg.tv_weight * 8.0 / np.sqrt(TV_EPS)
        step = cfg.step_size / max(lipschitz, 1e-12)
        current = value_of(x)
        if history is not None:
            history.append(current)
        z, momentum, extrapolated = x, 1.0, False
        failures = 0
        for it in range(cfg.iterations):
            zt = Tensor(z, requires_grad=True)
            objective(zt).backward()
            grad = zt.grad
            if not np.any(grad) and not extrapolated:
                break
            candidate = z - step * grad
            value = value_of(candidate)
            if not (np.isfinite(value) and value <= current):
                if extrapolated:
                    z, momentum, extrapolated = x, 1.0, False
                    continue
                step *= 0.5
                failures += 1
                logger.debug("map_tv iteration %d: objective rose, step halved to %.3g", it, step)
                if failures >= MAX_FAILURES:
                    logger.warning(
                        "map_tv stopped after %d consecutive failed steps at iteration %d",
                        MAX_FAILURES,
                        it,
                    )
                    break
                continue
            failures = 0
            change = float(np.max(np.abs(candidate - x)))
            next_momentum = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum**2))
            beta = (momentum - 1.0) / next_momentum
            z = candidate + beta * (candidate - x)
            x, current, momentum, extrapolated = candidate, value, next_momentum, beta > 0
            if history is not None:
                history.append(current)
            if change <= cfg.tol:
                logger.debug("map_tv converged after %d iteration(s)", it + 1)
                break
    return np.clip(x[0], -1.0, 1.0)


def restore(
    y,
    op: ForwardOperator,
    cfg: Optional[RestoreConfig] = None,
    origin: Tuple[int, int] = (0, 0),
    extent: Optional[Tuple[int, int]] = None,
) -> np.ndarray:
    """Dispatch to the configured solver."""
    cfg = cfg or RestoreConfig()
    if cfg.solver == "map_tv":
        return map_tv(y, op, cfg, origin, extent)
    if isinstance(op, (KernelGridOperator, DownscaleOperator)):
        raise ValueError(f"the Wiener solver handles shift-invariant blur only, not {op.variant}")
    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else op.sigma
    with no_grad():
        kernel = op.materialize_kernel().data
    return wiener(y, kernel, sigma)
