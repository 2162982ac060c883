"""
Conditional flow matching on the linear path
============================================

    z_t = (1 - t) z0 + t z1,   z0 ~ N(0, I)

The regression target is ``z1 - z0``. The marginal score of this path is
recovered from any velocity field through

    s(z, t) = (t v(z, t) - z) / (1 - t).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np

from ..autodiff import Tensor, as_tensor, no_grad
from ..core.errors import ShapeError

logger = logging.getLogger(__name__)

DEFAULT_T_CLAMP = 1e-3


class VelocityModel(Protocol):
    def __call__(self, z: Tensor, t: np.ndarray, cond: Optional[Tensor] = None) -> Tensor: ...


@dataclass
class FlowState:
    """A point on a flow trajectory."""

    z: Tensor
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"flow time must lie in [0, 1], got {self.t}")


def _time_column(t: np.ndarray, ndim: int, dtype) -> np.ndarray:
    return np.asarray(t, dtype=dtype).reshape((-1,) + (1,) * (ndim - 1))


def _batch_times(t, batch: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (batch,)).copy()


def sample_times(rng: np.random.Generator, n: int, t_clamp: float = DEFAULT_T_CLAMP) -> np.ndarray:
    """Uniform flow times on ``[t_clamp, 1 - t_clamp]``."""
    return rng.uniform(t_clamp, 1.0 - t_clamp, size=n)


def check_cond(model, z: Tensor, cond: Optional[Tensor]) -> None:
    checker = getattr(model, "check_cond", None)
    if checker is not None:
        checker(z, cond)


def cfm_loss(
    model: VelocityModel,
    z1: Tensor,
    cond: Optional[Tensor] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    z0: Optional[np.ndarray] = None,
    t: Optional[np.ndarray] = None,
    t_clamp: float = DEFAULT_T_CLAMP,
) -> Tensor:
    """Batch mean of ``||v(z_t, t, cond) - (z1 - z0)||^2``.

    ``z0`` and ``t`` are drawn from ``rng`` unless given. The loss is
    differentiable w.r.t. the model parameters and ``z1``.
    """
    z1 = as_tensor(z1)
    batch = z1.shape[0]
    check_cond(model, z1, cond)
    if (z0 is None or t is None) and rng is None:
        raise ValueError("cfm_loss needs an rng unless both z0 and t are given")
    t = sample_times(rng, batch, t_clamp) if t is None else _batch_times(t, batch)
    if z0 is None:
        z0 = rng.standard_normal(z1.shape)
    z0 = np.asarray(z0, dtype=z1.dtype)
    if z0.shape != z1.shape:
        raise ShapeError(f"z0 shape {z0.shape} != z1 shape {z1.shape}")
    tc = _time_column(t, z1.ndim, z1.dtype)
    zt = z1 * tc + (1.0 - tc) * z0
    residual = model(zt, t, cond) - (z1 - z0)
    return residual.square().reshape(batch, -1).sum(axis=1).mean()


def euler_step(
    model: VelocityModel, state: FlowState, dt: float, cond: Optional[Tensor] = None
) -> FlowState:
    batch = state.z.shape[0]
    with no_grad():
        v = model(state.z, np.full(batch, state.t), cond)
    z = Tensor._wrap(state.z.data + dt * v.data)
    return FlowState(z=z, t=min(1.0, state.t + dt))


def sample(
    model: VelocityModel,
    n: int,
    steps: int,
    cond: Optional[Tensor] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    shape: Optional[Tuple[int, ...]] = None,
    z0: Optional[np.ndarray] = None,
) -> Tensor:
    """Euler-integrate ``dz = v dt`` from ``t = 0`` to ``t = 1``."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if z0 is None:
        if shape is None:
            arch = getattr(model, "arch", None)
            if cond is None or arch is None:
                raise ShapeError("sample needs a shape unless cond fixes the spatial extent")
            shape = (arch.channels,) + tuple(cond.shape[2:])
        if rng is None:
            raise ValueError("sample needs an rng unless z0 is given")
        z0 = rng.standard_normal((n,) + tuple(shape))
    z0 = np.asarray(z0)
    if z0.shape[0] != n:
        raise ShapeError(f"z0 batch {z0.shape[0]} != n={n}")
    dt = 1.0 / steps
    state = FlowState(z=Tensor._wrap(z0.copy()), t=0.0)
    for i in range(steps):
        state = FlowState(z=state.z, t=i * dt)
        state = euler_step(model, state, dt, cond)
    return state.z


def score_from_velocity(
    model: VelocityModel,
    z: Tensor,
    t,
    cond: Optional[Tensor] = None,
    t_clamp: float = DEFAULT_T_CLAMP,
) -> Tensor:
    """Marginal score ``(t v - z) / (1 - t)`` of the linear path.

    Times above ``1 - t_clamp`` are clamped (the formula is singular at 1);
    ``t = 0`` is exact and gives ``-z``.
    """
    z = as_tensor(z)
    batch = z.shape[0]
    t_arr = _batch_times(t, batch)
    clamped = np.clip(t_arr, 0.0, 1.0 - t_clamp)
    if np.any(clamped != t_arr):
        logger.warning(
            "flow time outside [0, %.4g] clamped for %d sample(s)",
            1.0 - t_clamp,
            int(np.sum(clamped != t_arr)),
        )
    tc = _time_column(clamped, z.ndim, z.dtype)
    v = model(z, clamped, cond)
    return (v * tc - z) / (1.0 - tc)


def ema_update(model, decay: float) -> None:
    """``ema <- decay * ema + (1 - decay) * params``."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"EMA decay must lie in [0, 1], got {decay}")
    for name, p in model.params.items():
        model.ema_params[name] = (decay * model.ema_params[name] + (1.0 - decay) * p.data).astype(
            p.data.dtype, copy=False
        )
