"""
Forward operators
=================

A forward operator maps clean patches to corrupted ones,

    y = A_w(x) + sigma * u,    u ~ N(0, I).

Four parameterizations are provided:

- ``UniformKernelOperator``: one kernel per channel, shift-invariant blur.
- ``KernelGridOperator``: a ``Gy x Gx`` grid of kernels bilinearly blended
  over the image, for spatially varying blur.
- ``LinearConvNetOperator``: a bias-free, activation-free convolutional
  net (7, 5, 5, 1) whose composition is a single 15x15 kernel.
- ``DownscaleOperator``: an inner blur followed by top-left subsampling.

All convolutions are correlations with replicate padding.
"""

from __future__ import annotations

import contextlib
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import fftconvolve

from ..autodiff import (
    PaddingMode,
    Tensor,
    as_tensor,
    conv2d,
    depthwise_conv2d,
    load_archive,
    no_grad,
    save_archive,
    stack,
)
from ..core.config import OperatorConfig
from ..core.datatypes import PatchBatch, normalized_coordinate
from ..core.errors import ShapeError
from .kernels import Normalization, anisotropic_field, build_kernel, normalize_kernel

logger = logging.getLogger(__name__)

# raw parameters for learnable kernels start this far above zero so that the
# absolute-value map has a non-zero gradient everywhere
LEARNABLE_FLOOR = 1e-4

NET_KERNEL_SIZES = (7, 5, 5, 1)


class OperatorVariant(str, Enum):
    UNIFORM = "uniform"
    GRID = "grid"
    LINEAR_NET = "linear_net"
    DOWNSCALE = "downscale"

    def __str__(self) -> str:
        return self.value


def inverse_softplus(value: float) -> float:
    value = max(float(value), 1e-8)
    return value + float(np.log(-np.expm1(-value)))


# ============================================================================
# NOISE
# ============================================================================


class NoiseModel:
    """Additive white Gaussian noise with fixed or trainable std-dev.

    A trainable sigma is stored as a raw scalar mapped through softplus, so
    it stays non-negative under any update.
    """

    def __init__(self, sigma: float = 0.0, trainable: bool = False, dtype=np.float64):
        if sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {sigma}")
        self.trainable = bool(trainable)
        self.fixed = float(sigma)
        self.raw: Optional[Tensor] = None
        if self.trainable:
            self.raw = Tensor([inverse_softplus(sigma)], requires_grad=True, dtype=dtype)

    def sigma_tensor(self) -> Tensor:
        if self.raw is None:
            return Tensor._wrap(np.asarray(self.fixed))
        return self.raw.softplus().reshape(())

    @property
    def sigma(self) -> float:
        return float(self.sigma_tensor().data)

    def parameters(self) -> Dict[str, Tensor]:
        return {"noise.raw": self.raw} if self.raw is not None else {}

    def perturb(self, y: Tensor, rng: np.random.Generator) -> Tensor:
        """``y + sigma * u``; a fixed zero sigma returns ``y`` untouched."""
        if self.raw is None and self.fixed == 0.0:
            return y
        u = rng.standard_normal(y.shape).astype(y.dtype, copy=False)
        if self.raw is None:
            return y + self.fixed * u
        return y + self.sigma_tensor() * u

    def to_dict(self) -> Dict[str, Any]:
        return {"sigma": self.sigma, "trainable": self.trainable}


# ============================================================================
# BASE
# ============================================================================


class ForwardOperator:
    """Common interface of the operator family."""

    variant: OperatorVariant

    def __init__(
        self,
        channels: int,
        noise: Optional[NoiseModel] = None,
        normalization: Union[Normalization, str] = Normalization.HARD,
        dtype=np.float64,
    ):
        self.channels = int(channels)
        self.noise = noise or NoiseModel(0.0, dtype=dtype)
        self.normalization = Normalization(normalization)
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = {}

    # -- parameters ------------------------------------------------------
    def named_parameters(self) -> Dict[str, Tensor]:
        named = dict(self.params)
        named.update(self.noise.parameters())
        return named

    def parameters(self) -> List[Tensor]:
        named = self.named_parameters()
        return [named[k] for k in sorted(named)]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    @contextlib.contextmanager
    def frozen(self) -> Iterator["ForwardOperator"]:
        """Parameters stop recording gradients inside the block."""
        params = self.parameters()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, flag in zip(params, flags):
                p.requires_grad = flag

    @property
    def sigma(self) -> float:
        return self.noise.sigma

    # -- geometry --------------------------------------------------------
    def output_size(self, h: int, w: int) -> Tuple[int, int]:
        return h, w

    @property
    def needs_coords(self) -> bool:
        return False

    # -- application -----------------------------------------------------
    def _check_batch(self, batch: PatchBatch) -> None:
        if batch.channels != self.channels:
            raise ShapeError(
                f"operator expects {self.channels} channel(s), patches have {batch.channels}"
            )
        if self.needs_coords and not batch.has_coords:
            raise ShapeError(f"{self.variant} operator requires source coordinates on each patch")

    def forward(self, batch: PatchBatch) -> Tensor:  # pragma: no cover - abstract
        raise NotImplementedError

    def forward_image(
        self,
        image: Tensor,
        origin: Tuple[int, int] = (0, 0),
        extent: Optional[Tuple[int, int]] = None,
    ) -> Tensor:
        """Noiseless operator on whole images or tiles ``[B, C, H, W]``.

        ``origin`` and ``extent`` place a tile within its full frame so that
        spatially varying operators pick the right kernels.
        """
        image = as_tensor(image)
        b, _, h, w = image.shape
        extent = extent or (h, w)
        center = (
            normalized_coordinate(origin[0] + (h - 1) / 2.0, extent[0]),
            normalized_coordinate(origin[1] + (w - 1) / 2.0, extent[1]),
        )
        batch = PatchBatch(
            pixels=image,
            coords=np.tile(np.asarray(center, dtype=np.float64), (b, 1)),
            positions=np.tile(np.asarray(origin, dtype=np.float64), (b, 1)),
            extents=np.tile(np.asarray(extent, dtype=np.float64), (b, 1)),
        )
        return self.forward(batch)

    # -- kernels ---------------------------------------------------------
    def materialize_kernel(self, at: Optional[Tuple[float, float]] = None) -> Tensor:
        raise NotImplementedError  # pragma: no cover

    def regularized_kernels(self) -> List[Tensor]:
        """Kernels the shape regularizers act on."""
        return [self.materialize_kernel()]

    # -- persistence -----------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": str(self.variant),
            "channels": self.channels,
            "normalization": str(self.normalization),
            "noise": self.noise.to_dict(),
            "dtype": self.dtype.name,
        }

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            if name not in state:
                raise ShapeError(f"operator state lacks parameter {name}")
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"parameter {name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)
            p.grad = None

    def save(self, directory: Union[str, Path]) -> Path:
        return save_operator(self, directory)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(channels={self.channels}, sigma={self.sigma:.4g})"


def _per_channel(kernel: np.ndarray, channels: int) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim == 2:
        kernel = np.broadcast_to(kernel, (channels,) + kernel.shape).copy()
    if kernel.shape[0] != channels:
        raise ShapeError(f"kernel has {kernel.shape[0]} channel(s), operator has {channels}")
    return kernel


# ============================================================================
# UNIFORM KERNEL
# ============================================================================


class UniformKernelOperator(ForwardOperator):
    """Shift-invariant per-channel blur ``x * k``."""

    variant = OperatorVariant.UNIFORM

    def __init__(
        self,
        kernel: np.ndarray,
        channels: int = 1,
        noise: Optional[NoiseModel] = None,
        normalization: Union[Normalization, str] = Normalization.HARD,
        learnable: bool = True,
        dtype=np.float64,
    ):
        super().__init__(channels, noise, normalization, dtype)
        raw = _per_channel(kernel, channels)
        if raw.shape[-1] % 2 == 0 or raw.shape[-2] % 2 == 0:
            raise ShapeError(f"kernel extent must be odd, got {raw.shape[-2:]}")
        self.params["kernel"] = Tensor(raw, requires_grad=learnable, dtype=dtype)

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return self.params["kernel"].shape[-2:]

    def kernel(self) -> Tensor:
        return normalize_kernel(self.params["kernel"], self.normalization)

    def forward(self, batch: PatchBatch) -> Tensor:
        self._check_batch(batch)
        return depthwise_conv2d(batch.pixels, self.kernel(), PaddingMode.REPLICATE)

    def materialize_kernel(self, at=None) -> Tensor:
        return self.kernel()

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out["kernel_size"] = list(self.kernel_size)
        return out


# ============================================================================
# KERNEL GRID
# ============================================================================


def _hat_weights(u: np.ndarray, n_nodes: int) -> np.ndarray:
    """Linear interpolation weights ``[..., n_nodes]`` for fractional node index ``u``."""
    if n_nodes == 1:
        return np.ones(np.shape(u) + (1,))
    u = np.clip(np.asarray(u, dtype=np.float64), 0.0, n_nodes - 1)
    nodes = np.arange(n_nodes)
    return np.maximum(0.0, 1.0 - np.abs(u[..., None] - nodes))


def _node_index(coord: np.ndarray, n_nodes: int) -> np.ndarray:
    """Normalized coordinate in ``[-1, 1]`` -> fractional node index."""
    return (np.asarray(coord, dtype=np.float64) + 1.0) * 0.5 * (n_nodes - 1)


class KernelGridOperator(ForwardOperator):
    """Spatially varying blur from a grid of kernels spanning the image.

    Node ``(i, j)`` sits at pixel ``(i (H-1)/(Gy-1), j (W-1)/(Gx-1))`` of the
    reference frame. ``blend="pixel"`` mixes the node convolutions with
    per-pixel bilinear weight maps; ``blend="patch"`` convolves each patch
    with the single kernel interpolated at its centre.
    """

    variant = OperatorVariant.GRID

    def __init__(
        self,
        grid: np.ndarray,
        image_extent: Tuple[int, int],
        channels: int = 1,
        blend: str = "pixel",
        noise: Optional[NoiseModel] = None,
        normalization: Union[Normalization, str] = Normalization.HARD,
        learnable: bool = True,
        dtype=np.float64,
    ):
        super().__init__(channels, noise, normalization, dtype)
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim == 4:
            grid = np.broadcast_to(grid[:, :, None], grid.shape[:2] + (channels,) + grid.shape[2:])
        if grid.ndim != 5 or grid.shape[2] != channels:
            raise ShapeError(f"kernel grid must be [Gy,Gx,{channels},kh,kw], got {grid.shape}")
        if blend not in ("pixel", "patch"):
            raise ValueError(f"unknown grid blend mode {blend!r}")
        self.image_extent = (int(image_extent[0]), int(image_extent[1]))
        self.blend = blend
        self.params["grid"] = Tensor(grid.copy(), requires_grad=learnable, dtype=dtype)

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.params["grid"].shape[:2]

    @property
    def kernel_size(self) -> Tuple[int, int]:
        return self.params["grid"].shape[-2:]

    @property
    def needs_coords(self) -> bool:
        return True

    def node_kernels(self) -> Tensor:
        return normalize_kernel(self.params["grid"], self.normalization)

    def node_position(self, i: int, j: int) -> Tuple[float, float]:
        gy, gx = self.grid_shape
        h, w = self.image_extent
        row = (h - 1) / 2.0 if gy == 1 else i * (h - 1) / (gy - 1)
        col = (w - 1) / 2.0 if gx == 1 else j * (w - 1) / (gx - 1)
        return row, col

    def node_weights(self, coords: np.ndarray) -> np.ndarray:
        """``[N, Gy*Gx]`` blend weights for normalized coordinates ``[N, 2]``."""
        gy, gx = self.grid_shape
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        wr = _hat_weights(_node_index(coords[:, 0], gy), gy)
        wc = _hat_weights(_node_index(coords[:, 1], gx), gx)
        return (wr[:, :, None] * wc[:, None, :]).reshape(len(coords), gy * gx)

    def interpolate(self, coords: np.ndarray) -> Tensor:
        """Kernels ``[N, C, kh, kw]`` at normalized coordinates ``[N, 2]``."""
        nodes = self.node_kernels()
        gy, gx, c, kh, kw = nodes.shape
        weights = Tensor._wrap(self.node_weights(coords).astype(nodes.dtype))
        flat = weights @ nodes.reshape(gy * gx, c * kh * kw)
        return flat.reshape(-1, c, kh, kw)

    def forward(self, batch: PatchBatch) -> Tensor:
        self._check_batch(batch)
        if self.blend == "patch":
            return depthwise_conv2d(
                batch.pixels, self.interpolate(batch.coords), PaddingMode.REPLICATE
            )
        gy, gx = self.grid_shape
        rows, cols = batch.pixel_grid()
        wr = _hat_weights(_node_index(rows, gy), gy)
        wc = _hat_weights(_node_index(cols, gx), gx)
        nodes = self.node_kernels()
        out = None
        for i in range(gy):
            if not np.any(wr[..., i]):
                continue
            for j in range(gx):
                weight = wr[..., i] * wc[..., j]
                if not np.any(weight):
                    continue
                blurred = depthwise_conv2d(batch.pixels, nodes[i, j], PaddingMode.REPLICATE)
                term = blurred * weight[:, None].astype(blurred.dtype)
                out = term if out is None else out + term
        return out

    def materialize_kernel(self, at: Optional[Tuple[float, float]] = None) -> Tensor:
        if at is None:
            raise ValueError("a KernelGrid kernel needs an image coordinate (row, col)")
        return interpolate_kernels(self, at)

    def regularized_kernels(self) -> List[Tensor]:
        nodes = self.node_kernels()
        gy, gx, c, kh, kw = nodes.shape
        return [nodes.reshape(gy * gx * c, kh, kw)]

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out.update(
            {
                "grid_shape": list(self.grid_shape),
                "kernel_size": list(self.kernel_size),
                "image_extent": list(self.image_extent),
                "blend": self.blend,
            }
        )
        return out


def interpolate_kernels(grid: KernelGridOperator, coord: Tuple[float, float]) -> Tensor:
    """Bilinear blend ``[C, kh, kw]`` of the nearest grid kernels at pixel ``(row, col)``.

    Coordinates outside the reference frame are clamped to the border.
    """
    h, w = grid.image_extent
    row = float(np.clip(coord[0], 0.0, h - 1))
    col = float(np.clip(coord[1], 0.0, w - 1))
    normalized = np.array([[normalized_coordinate(row, h), normalized_coordinate(col, w)]])
    kernels = grid.interpolate(normalized)
    return kernels.reshape(kernels.shape[1:])


# ============================================================================
# LINEAR CONV NET
# ============================================================================


class LinearConvNetOperator(ForwardOperator):
    """Deep linear network whose collapse is one ``15 x 15`` kernel.

    Layers are bias-free correlations of sizes (7, 5, 5, 1) with ``width``
    hidden channels and no activation. The network acts on each image
    channel separately. Application goes through the collapsed kernel, which
    is the exact composition of the layers.
    """

    variant = OperatorVariant.LINEAR_NET

    def __init__(
        self,
        channels: int = 1,
        width: int = 64,
        init_noise: float = 1e-3,
        rng: Optional[np.random.Generator] = None,
        noise: Optional[NoiseModel] = None,
        kernel_sizes: Sequence[int] = NET_KERNEL_SIZES,
        learnable: bool = True,
        dtype=np.float64,
    ):
        super().__init__(channels, noise, Normalization.NONE, dtype)
        rng = rng or np.random.default_rng(0)
        self.width = int(width)
        self.kernel_sizes = tuple(int(k) for k in kernel_sizes)
        n_layers = len(self.kernel_sizes)
        for layer, k in enumerate(self.kernel_sizes):
            c_in = 1 if layer == 0 else self.width
            c_out = 1 if layer == n_layers - 1 else self.width
            weight = rng.standard_normal((c_out, c_in, k, k)) * init_noise
            # identity path through channel 0
            weight[0, 0, k // 2, k // 2] += 1.0
            self.params[f"layer{layer}"] = Tensor(weight, requires_grad=learnable, dtype=dtype)

    @property
    def receptive_field(self) -> int:
        return sum(k - 1 for k in self.kernel_sizes) + 1

    def layers(self) -> List[Tensor]:
        return [self.params[f"layer{i}"] for i in range(len(self.kernel_sizes))]

    def collapsed_kernel(self) -> Tensor:
        """Single-channel ``[R, R]`` correlation kernel of the whole net.

        A centred dirac pushed through the layers returns the composed kernel
        mirrored; flipping it back gives the correlation kernel.
        """
        r = self.receptive_field
        canvas = np.zeros((1, 1, r, r), dtype=self.dtype)
        canvas[0, 0, r // 2, r // 2] = 1.0
        h = Tensor._wrap(canvas)
        for weight in self.layers():
            h = conv2d(h, weight, PaddingMode.ZERO)
        return h.reshape(r, r).flip((0, 1))

    def materialize_kernel(self, at=None) -> Tensor:
        k = self.collapsed_kernel()
        r = self.receptive_field
        return k.reshape(1, r, r) if self.channels == 1 else _tile_channels(k, self.channels)

    def forward(self, batch: PatchBatch) -> Tensor:
        self._check_batch(batch)
        return depthwise_conv2d(batch.pixels, self.materialize_kernel(), PaddingMode.REPLICATE)

    def forward_layers(self, x: Tensor) -> Tensor:
        """Layer-by-layer application with zero padding (single channel input)."""
        h = as_tensor(x)
        for weight in self.layers():
            h = conv2d(h, weight, PaddingMode.ZERO)
        return h

    def compose_layer_kernels(self) -> np.ndarray:
        """Explicit composition of the layer kernels by full 2-D convolution."""
        weights = [p.data.astype(np.float64) for p in self.layers()]
        total = weights[0]  # [C_out, 1, k, k]
        for weight in weights[1:]:
            # correlation composition: K[o, c] = sum_m W[o, m] (*) K[m, c]
            total = fftconvolve(
                weight[:, :, None, :, :], total[None, :, :, :, :], mode="full", axes=(-2, -1)
            ).sum(axis=1)
        return total[0, 0]

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out.update({"width": self.width, "kernel_sizes": list(self.kernel_sizes)})
        return out


def _tile_channels(kernel: Tensor, channels: int) -> Tensor:
    return stack([kernel] * channels, axis=0)


# ============================================================================
# DOWNSCALE
# ============================================================================


class DownscaleOperator(ForwardOperator):
    """``(x * k) subsampled by s``, keeping the top-left sample of each block."""

    variant = OperatorVariant.DOWNSCALE

    def __init__(
        self,
        inner: ForwardOperator,
        scale: int = 2,
        noise: Optional[NoiseModel] = None,
        dtype=np.float64,
    ):
        if isinstance(inner, (DownscaleOperator, KernelGridOperator)):
            raise ValueError("Downscale wraps a uniform kernel or a linear conv net")
        if scale < 1:
            raise ValueError(f"scale must be >= 1, got {scale}")
        super().__init__(inner.channels, noise, inner.normalization, dtype)
        self.inner = inner
        self.scale = int(scale)

    def named_parameters(self) -> Dict[str, Tensor]:
        named = {f"inner.{k}": v for k, v in self.inner.params.items()}
        named.update(self.noise.parameters())
        return named

    def output_size(self, h: int, w: int) -> Tuple[int, int]:
        return h // self.scale, w // self.scale

    def forward(self, batch: PatchBatch) -> Tensor:
        self._check_batch(batch)
        h, w = batch.patch_size
        if h % self.scale or w % self.scale:
            raise ShapeError(f"scale {self.scale} does not divide patch extent {h}x{w}")
        blurred = self.inner.forward(batch)
        return blurred[:, :, :: self.scale, :: self.scale]

    def materialize_kernel(self, at=None) -> Tensor:
        return self.inner.materialize_kernel(at)

    def regularized_kernels(self) -> List[Tensor]:
        return self.inner.regularized_kernels()

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out.update({"scale": self.scale, "inner": self.inner.to_dict()})
        return out


# ============================================================================
# MODULE-LEVEL OPERATIONS
# ============================================================================


def apply(
    op: ForwardOperator,
    x: Union[PatchBatch, Tensor, np.ndarray],
    rng: Optional[np.random.Generator] = None,
    noiseless: bool = False,
) -> Tensor:
    """``A_w(x) + sigma u``; differentiable in the kernel and noise parameters."""
    batch = x if isinstance(x, PatchBatch) else PatchBatch(pixels=as_tensor(x))
    y = op.forward(batch)
    if noiseless:
        return y
    if rng is None:
        if op.noise.trainable or op.noise.fixed > 0:
            raise ValueError("apply needs an rng when the operator adds noise")
        return y
    return op.noise.perturb(y, rng)


def apply_image(
    op: ForwardOperator,
    image: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    noiseless: bool = False,
) -> np.ndarray:
    """Degrade a full ``[C, H, W]`` image; returns a plain array."""
    with no_grad():
        x = as_tensor(np.asarray(image, dtype=op.dtype)[None])
        y = op.forward_image(x)
        if not noiseless and rng is not None:
            y = op.noise.perturb(y, rng)
    return y.data[0]


def materialize_kernel(op: ForwardOperator, at: Optional[Tuple[float, float]] = None) -> Tensor:
    return op.materialize_kernel(at)


def build_operator(
    cfg: OperatorConfig,
    rng: Optional[np.random.Generator] = None,
    image_extent: Optional[Tuple[int, int]] = None,
    learnable: bool = False,
    dtype=np.float64,
) -> ForwardOperator:
    """Construct an operator from its configuration.

    ``learnable`` lifts kernel parameters off zero and enables gradients;
    a learnable operator initialised from a dirac still materializes to a
    dirac up to ``LEARNABLE_FLOOR``.
    """
    rng = rng or np.random.default_rng(0)
    noise = NoiseModel(cfg.noise_sigma, cfg.trainable_noise and learnable, dtype=dtype)

    def lift(kernel: np.ndarray) -> np.ndarray:
        if not learnable or cfg.normalization == "none":
            return kernel
        return kernel + LEARNABLE_FLOOR * float(np.max(np.abs(kernel)) or 1.0)

    def uniform(noise_model: Optional[NoiseModel]) -> UniformKernelOperator:
        kernel = lift(_per_channel(build_kernel(cfg.kernel, rng), cfg.channels))
        return UniformKernelOperator(
            kernel, cfg.channels, noise_model, cfg.normalization, learnable, dtype
        )

    def linear_net(noise_model: Optional[NoiseModel]) -> LinearConvNetOperator:
        return LinearConvNetOperator(
            cfg.channels,
            cfg.net_channels,
            cfg.net_init_noise if learnable else 0.0,
            rng,
            noise_model,
            learnable=learnable,
            dtype=dtype,
        )

    if cfg.variant == "uniform":
        return uniform(noise)
    if cfg.variant == "linear_net":
        return linear_net(noise)
    if cfg.variant == "downscale":
        inner = uniform(None) if cfg.inner == "uniform" else linear_net(None)
        return DownscaleOperator(inner, cfg.scale, noise, dtype)
    if image_extent is None:
        raise ValueError("a grid operator needs the image extent it spans")
    gy, gx = cfg.grid_shape
    if cfg.grid_kernels == "anisotropic_field":
        grid = anisotropic_field((gy, gx), cfg.kernel.size, rng)
    else:
        grid = np.broadcast_to(build_kernel(cfg.kernel, rng), (gy, gx) + (cfg.kernel.size,) * 2)
    grid = np.broadcast_to(grid[:, :, None], (gy, gx, cfg.channels) + grid.shape[2:])
    return KernelGridOperator(
        lift(np.array(grid)),
        image_extent,
        cfg.channels,
        cfg.blend,
        noise,
        cfg.normalization,
        learnable,
        dtype,
    )


# ============================================================================
# PERSISTENCE
# ============================================================================


def save_operator(op: ForwardOperator, directory: Union[str, Path]) -> Path:
    descriptor = {"kind": "forward_operator", "operator": op.to_dict()}
    return save_archive(directory, op.state_dict(), descriptor)


def operator_from_dict(desc: Dict[str, Any]) -> ForwardOperator:
    variant = OperatorVariant(desc["variant"])
    dtype = np.dtype(desc.get("dtype", "float64"))
    noise_desc = desc.get("noise", {"sigma": 0.0, "trainable": False})
    noise = NoiseModel(noise_desc["sigma"], noise_desc["trainable"], dtype=dtype)
    c = desc["channels"]
    if variant is OperatorVariant.UNIFORM:
        kh, kw = desc["kernel_size"]
        return UniformKernelOperator(
            np.zeros((c, kh, kw)), c, noise, desc["normalization"], dtype=dtype
        )
    if variant is OperatorVariant.GRID:
        gy, gx = desc["grid_shape"]
        kh, kw = desc["kernel_size"]
        return KernelGridOperator(
            np.zeros((gy, gx, c, kh, kw)),
            tuple(desc["image_extent"]),
            c,
            desc["blend"],
            noise,
            desc["normalization"],
            dtype=dtype,
        )
    if variant is OperatorVariant.LINEAR_NET:
        return LinearConvNetOperator(
            c, desc["width"], 0.0, None, noise, desc["kernel_sizes"], dtype=dtype
        )
    return DownscaleOperator(operator_from_dict(desc["inner"]), desc["scale"], noise, dtype)


def load_operator(directory: Union[str, Path]) -> ForwardOperator:
    tensors, descriptor = load_archive(directory)
    if descriptor.get("kind") != "forward_operator":
        raise ShapeError(f"{directory} does not hold a forward operator")
    op = operator_from_dict(descriptor["operator"])
    op.load_state_dict(tensors)
    logger.debug("loaded %r from %s", op, directory)
    return op
