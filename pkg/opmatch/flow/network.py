"""
Velocity network
================

A small convolutional residual network ``v(z, t, cond)``:

    h  = conv_in([z, cond]) + T_0(t)
    h += conv_l(silu(h + T_l(t)))          for each residual block
    v  = conv_out(silu(h))

``T_l`` are per-layer linear projections of a sinusoidal time embedding,
added as channel biases. Positional conditioning channels are concatenated
to the input. The network keeps an EMA shadow of its parameters.
"""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from ..autodiff import Tensor, concat, conv2d, linear, load_archive, save_archive
from ..core.config import ArchConfig
from ..core.errors import ShapeError

logger = logging.getLogger(__name__)

_EMA_PREFIX = "ema."


def sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """``[B] -> [B, dim]`` sin/cos features of ``1000 * t``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = 1000.0 * t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class VelocityField:
    """Parameterized velocity network with EMA shadow weights."""

    def __init__(self, arch: Optional[ArchConfig] = None, seed: int = 0, dtype=np.float64):
        self.arch = arch or ArchConfig()
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = self._init_params(np.random.default_rng(self.seed))
        self.ema_params: Dict[str, np.ndarray] = {k: p.data.copy() for k, p in self.params.items()}

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------
    @property
    def n_blocks(self) -> int:
        return self.arch.depth - 2

    def _init_params(self, rng: np.random.Generator) -> Dict[str, Tensor]:
        a = self.arch
        k = a.kernel_size
        c_in = a.channels + a.cond_channels
        shapes = {
            "conv_in.weight": (a.hidden, c_in, k, k),
            "conv_in.bias": (a.hidden,),
            "conv_out.weight": (a.channels, a.hidden, k, k),
            "conv_out.bias": (a.channels,),
        }
        for layer in range(self.n_blocks):
            shapes[f"block{layer}.weight"] = (a.hidden, a.hidden, k, k)
            shapes[f"block{layer}.bias"] = (a.hidden,)
        for layer in range(self.n_blocks + 1):
            shapes[f"time{layer}.weight"] = (a.hidden, a.time_embed_dim)
            shapes[f"time{layer}.bias"] = (a.hidden,)

        params = {}
        for name in sorted(shapes):
            shape = shapes[name]
            if name.endswith("bias"):
                value = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                value = rng.standard_normal(shape) * (a.init_scale / np.sqrt(fan_in))
                if name.startswith("conv_out") or name.startswith("time"):
                    value *= 0.1
            params[name] = Tensor(value, requires_grad=True, dtype=self.dtype)
        return params

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------
    def check_cond(self, z: Tensor, cond: Optional[Tensor]) -> None:
        expected = self.arch.cond_channels
        got = 0 if cond is None else cond.shape[1]
        if got != expected:
            raise ShapeError(
                f"conditioning channel count mismatch: arch expects {expected}, got {got}"
            )
        if cond is not None and (cond.shape[0] != z.shape[0] or cond.shape[2:] != z.shape[2:]):
            raise ShapeError(f"cond shape {cond.shape} incompatible with input {z.shape}")

    def forward(self, z: Tensor, t, cond: Optional[Tensor] = None) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor._wrap(np.asarray(z))
        if z.ndim != 4 or z.shape[1] != self.arch.channels:
            raise ShapeError(
                f"velocity input must be [B,{self.arch.channels},H,W], got {z.shape}"
            )
        if cond is not None and not isinstance(cond, Tensor):
            cond = Tensor._wrap(np.asarray(cond))
        self.check_cond(z, cond)
        if z.dtype != self.dtype:
            z = z.astype(self.dtype)
        batch = z.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        emb = Tensor._wrap(sinusoidal_embedding(t, self.arch.time_embed_dim).astype(self.dtype))
        p = self.params

        def time_bias(layer: int) -> Tensor:
            proj = linear(emb, p[f"time{layer}.weight"], p[f"time{layer}.bias"])
            return proj.reshape(batch, self.arch.hidden, 1, 1)

        x = z
        if cond is not None:
            x = concat([z, cond.astype(self.dtype) if cond.dtype != self.dtype else cond], axis=1)
        h = conv2d(x, p["conv_in.weight"], "zero", p["conv_in.bias"]) + time_bias(0)
        for layer in range(self.n_blocks):
            a = (h + time_bias(layer + 1)).silu()
            h = h + conv2d(a, p[f"block{layer}.weight"], "zero", p[f"block{layer}.bias"])
        return conv2d(h.silu(), p["conv_out.weight"], "zero", p["conv_out.bias"])

    __call__ = forward

    # ------------------------------------------------------------------
    # parameter management
    # ------------------------------------------------------------------
    def parameters(self) -> List[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(
        self, state: Dict[str, np.ndarray], ema: Optional[Dict[str, np.ndarray]] = None
    ) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise ShapeError(f"state dict lacks parameters: {sorted(missing)}")
        for name, p in self.params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"parameter {name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(self.dtype, copy=True)
            p.grad = None
        source = ema if ema is not None else state
        self.ema_params = {k: np.asarray(source[k]).astype(self.dtype, copy=True) for k in self.params}

    def copy(self) -> "VelocityField":
        clone = VelocityField.__new__(VelocityField)
        clone.arch = self.arch.model_copy()
        clone.seed = self.seed
        clone.dtype = self.dtype
        clone.params = {
            k: Tensor(p.data, requires_grad=p.requires_grad, dtype=self.dtype)
            for k, p in self.params.items()
        }
        clone.ema_params = {k: v.copy() for k, v in self.ema_params.items()}
        return clone

    def ema_model(self) -> "VelocityField":
        """A frozen network whose live weights are this model's EMA."""
        clone = self.copy()
        for name, p in clone.params.items():
            p.data = self.ema_params[name].copy()
            p.requires_grad = False
        return clone

    def freeze(self) -> "VelocityField":
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        return self

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name].data).tobytes())
            digest.update(np.ascontiguousarray(self.ema_params[name]).tobytes())
        return digest.hexdigest()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    # ------------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------------
    def save(self, directory: Union[str, Path]) -> Path:
        tensors = {name: p.data for name, p in self.params.items()}
        tensors.update({_EMA_PREFIX + name: v for name, v in self.ema_params.items()})
        descriptor = {
            "kind": "velocity_field",
            "arch": self.arch.model_dump(mode="json"),
            "seed": self.seed,
            "dtype": self.dtype.name,
        }
        path = save_archive(directory, tensors, descriptor)
        logger.debug("saved velocity field (%d parameters) to %s", self.num_parameters(), path)
        return path

    @classmethod
    def load(cls, directory: Union[str, Path]) -> "VelocityField":
        tensors, descriptor = load_archive(directory)
        if descriptor.get("kind") != "velocity_field":
            raise ShapeError(f"{directory} does not hold a velocity field checkpoint")
        model = cls(ArchConfig(**descriptor["arch"]), seed=descriptor["seed"], dtype=descriptor["dtype"])
        state = {k: v for k, v in tensors.items() if not k.startswith(_EMA_PREFIX)}
        ema = {k[len(_EMA_PREFIX):]: v for k, v in tensors.items() if k.startswith(_EMA_PREFIX)}
        model.load_state_dict(state, ema or None)
        return model
