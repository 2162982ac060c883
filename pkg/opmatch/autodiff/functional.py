"""
Spatial primitives: padding, convolution, linear maps, bilinear resize.

All convolutions here are cross-correlations (no kernel flip):

    out[b, o, y, x] = sum_{c, i, j} in[b, c, y + i, x + j] * k[o, c, i, j]

on the padded input. Gradients are produced with im2col matrix products
so both forward and backward go through BLAS.
"""

from __future__ import annotations

from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core.errors import ShapeError
from .tensor import Tensor, as_tensor


class PaddingMode(str, Enum):
    """Boundary handling for convolutions."""

    ZERO = "zero"
    REPLICATE = "replicate"
    CIRCULAR = "circular"
    VALID = "valid"

    def __str__(self) -> str:
        return self.value


PadSpec = Union[int, Tuple[int, int, int, int]]


def _pad_axis(x: Tensor, axis: int, before: int, after: int, mode: PaddingMode) -> Tensor:
    n = x.shape[axis]
    idx = np.arange(-before, n + after)
    valid = None
    if mode is PaddingMode.CIRCULAR:
        src = idx % n
    elif mode is PaddingMode.REPLICATE:
        src = np.clip(idx, 0, n - 1)
    else:
        valid = (idx >= 0) & (idx < n)
        src = np.clip(idx, 0, n - 1)

    out = np.take(x.data, src, axis=axis)
    if valid is not None:
        bshape = [1] * x.ndim
        bshape[axis] = len(idx)
        out = out * valid.reshape(bshape).astype(out.dtype)

    def backward(g):
        gm = np.moveaxis(g, axis, 0)
        s = src
        if valid is not None:
            gm = gm[valid]
            s = src[valid]
        acc = np.zeros((n,) + gm.shape[1:], dtype=g.dtype)
        np.add.at(acc, s, gm)
        return (np.moveaxis(acc, 0, axis),)

    return Tensor._make(out, (x,), backward, f"pad_{mode.value}")


def pad2d(x: Tensor, pad: PadSpec, mode: Union[str, PaddingMode] = PaddingMode.ZERO) -> Tensor:
    """Pad the last two axes; ``pad`` is ``(top, bottom, left, right)`` or one int."""
    mode = PaddingMode(mode)
    if isinstance(pad, int):
        pad = (pad, pad, pad, pad)
    top, bottom, left, right = pad
    x = as_tensor(x)
    if mode is PaddingMode.VALID or not any(pad):
        return x
    if top or bottom:
        x = _pad_axis(x, x.ndim - 2, top, bottom, mode)
    if left or right:
        x = _pad_axis(x, x.ndim - 1, left, right, mode)
    return x


def _im2col(x: np.ndarray, kh: int, kw: int) -> Tuple[np.ndarray, int, int]:
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    b, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return cols, ho, wo


def _correlate_valid(x: Tensor, w: Tensor) -> Tensor:
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    cols, ho, wo = _im2col(x.data, kh, kw)
    wmat = w.data.reshape(o, -1)
    out = np.ascontiguousarray((cols @ wmat.T).reshape(b, ho, wo, o).transpose(0, 3, 1, 2))

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)
        gw = (gmat.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gpad = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gcols, _, _ = _im2col(gpad, kh, kw)
            wflip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
            gx = (gcols @ wflip.T).reshape(b, h, wd, c).transpose(0, 3, 1, 2)
        return gx, gw

    return Tensor._make(out, (x, w), backward, "conv2d")


def _same_padding(kh: int, kw: int, mode: PaddingMode) -> Tuple[int, int, int, int]:
    if mode is PaddingMode.VALID:
        return (0, 0, 0, 0)
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"same-size padding needs odd kernel extents, got kh={kh}, kw={kw}")
    return (kh // 2, kh // 2, kw // 2, kw // 2)


def conv2d(
    input: Tensor,
    kernel: Tensor,
    padding: Union[str, PaddingMode] = PaddingMode.ZERO,
    bias: Optional[Tensor] = None,
) -> Tensor:
    """Cross-correlate ``input[B,C,H,W]`` with ``kernel[O,C,kh,kw]``.

    With any mode other than ``valid`` the output keeps ``H x W``.
    """
    mode = PaddingMode(padding)
    input, kernel = as_tensor(input), as_tensor(kernel)
    if input.ndim != 4:
        raise ShapeError(f"conv2d input must be [B,C,H,W], got rank {input.ndim}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be [O,C,kh,kw], got rank {kernel.ndim}")
    if kernel.shape[1] != input.shape[1]:
        raise ShapeError(
            f"conv2d channel dimension C mismatch: input has {input.shape[1]}, "
            f"kernel expects {kernel.shape[1]}"
        )
    kh, kw = kernel.shape[2:]
    padded = pad2d(input, _same_padding(kh, kw, mode), mode)
    if padded.shape[2] < kh or padded.shape[3] < kw:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than input {padded.shape[2]}x{padded.shape[3]}"
        )
    out = _correlate_valid(padded, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(f"conv2d bias must have shape ({kernel.shape[0]},), got {bias.shape}")
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def _depthwise_valid(x: Tensor, k: Tensor) -> Tensor:
    per_sample = k.ndim == 4
    kh, kw = k.shape[-2:]
    spec = "bchwij,bcij->bchw" if per_sample else "bchwij,cij->bchw"
    windows = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    out = np.einsum(spec, windows, k.data)

    def backward(g):
        gk = None
        if k.requires_grad:
            gk_spec = "bchwij,bchw->bcij" if per_sample else "bchwij,bchw->cij"
            gk = np.einsum(gk_spec, windows, g)
        gx = None
        if x.requires_grad:
            gpad = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = sliding_window_view(gpad, (kh, kw), axis=(2, 3))
            gx = np.einsum(spec, gwin, k.data[..., ::-1, ::-1])
        return gx, gk

    return Tensor._make(out, (x, k), backward, "depthwise_conv2d")


def depthwise_conv2d(
    input: Tensor, kernel: Tensor, padding: Union[str, PaddingMode] = PaddingMode.ZERO
) -> Tensor:
    """Correlate each channel with its own kernel.

    ``kernel`` is ``[C,kh,kw]`` (shared by the batch) or ``[B,C,kh,kw]``
    (one kernel set per sample).
    """
    mode = PaddingMode(padding)
    input, kernel = as_tensor(input), as_tensor(kernel)
    if input.ndim != 4:
        raise ShapeError(f"depthwise_conv2d input must be [B,C,H,W], got rank {input.ndim}")
    if kernel.ndim not in (3, 4):
        raise ShapeError(f"depthwise kernel must be [C,kh,kw] or [B,C,kh,kw], got {kernel.shape}")
    if kernel.shape[-3] != input.shape[1]:
        raise ShapeError(
            f"depthwise_conv2d channel dimension C mismatch: input has {input.shape[1]}, "
            f"kernel has {kernel.shape[-3]}"
        )
    if kernel.ndim == 4 and kernel.shape[0] != input.shape[0]:
        raise ShapeError(
            f"depthwise_conv2d batch dimension B mismatch: input has {input.shape[0]}, "
            f"kernel has {kernel.shape[0]}"
        )
    kh, kw = kernel.shape[-2:]
    padded = pad2d(input, _same_padding(kh, kw, mode), mode)
    if padded.shape[2] < kh or padded.shape[3] < kw:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than input {padded.shape[2]}x{padded.shape[3]}"
        )
    return _depthwise_valid(padded, kernel)


def linear(input: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``input @ weight.T + bias`` for ``input[B,N]``, ``weight[M,N]``."""
    input, weight = as_tensor(input), as_tensor(weight)
    if input.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects 2-D input and weight, got {input.shape}, {weight.shape}")
    if input.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear dimension N mismatch: input has {input.shape[1]}, weight has {weight.shape[1]}"
        )
    out = input @ weight.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear bias must have shape ({weight.shape[0]},), got {bias.shape}")
        out = out + bias
    return out


def _resize_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    # half-pixel centres, edge samples clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    mat = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def interpolate_bilinear(x: Tensor, size: Sequence[int]) -> Tensor:
    """Resize the last two axes of ``x`` to ``size`` with bilinear weights."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"interpolate_bilinear needs at least 2 axes, got {x.shape}")
    h_out, w_out = int(size[0]), int(size[1])
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"target size must be positive, got {tuple(size)}")
    mh = _resize_matrix(x.shape[-2], h_out, x.dtype)
    mw = _resize_matrix(x.shape[-1], w_out, x.dtype)
    out = mh @ x.data @ mw.T
    return Tensor._make(out, (x,), lambda g: (mh.T @ g @ mw,), "interpolate_bilinear")


def flatten(x: Tensor, start: int = 1) -> Tensor:
    return x.reshape(x.shape[:start] + (-1,))
