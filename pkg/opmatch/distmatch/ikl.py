"""
Integrated-KL operator gradient
===============================

For ``y1 = A_w(x) + eps`` and ``y_t = (1 - t) y0 + t y1`` the gradient of
the time-integrated KL divergence between the operator's output
distribution and the prior is

    E_t E[(s_aux(y_t, t) - s_prior(y_t, t))^T  d y_t / d w],

where the two scores are held constant. Both scores come from velocity
fields, ``s = (t v - z) / (1 - t)``, so the score difference equals
``t / (1 - t) (v_aux - v_prior)``. Mode ``"velocity"`` drops the
``t / (1 - t)`` factor, which only reweights the time integral; mode
``"score"`` keeps it.

The gradient is realised through a surrogate ``mean_b sum(diff * y_t)``
whose derivative w.r.t. the operator parameters is the estimate above.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..autodiff import Tensor, no_grad
from ..core.datatypes import PatchBatch
from ..flow import DEFAULT_T_CLAMP, VelocityModel, sample_times
from ..operators import apply
from ..operators.forward import ForwardOperator

logger = logging.getLogger(__name__)

TIME_WEIGHTS = ("velocity", "score")


@dataclass
class SurrogateTerms:
    """Pieces of one IKL estimate, kept for diagnostics."""

    surrogate: Tensor
    y1: Tensor
    t: np.ndarray
    diff: np.ndarray


def output_conditioning(batch: PatchBatch, spatial: Tuple[int, int]) -> Optional[Tensor]:
    """Positional channels of the operator output (subsampled for downscaling operators)."""
    cond = batch.conditioning()
    if cond is None:
        return None
    h, w = cond.shape[2:]
    if (h, w) == tuple(spatial):
        return cond
    sy, sx = h // spatial[0], w // spatial[1]
    return Tensor._wrap(cond.data[:, :, ::sy, ::sx].copy())


def _model_conditioning(model, batch: PatchBatch, spatial) -> Optional[Tensor]:
    arch = getattr(model, "arch", None)
    if arch is not None and arch.cond_channels == 0:
        return None
    return output_conditioning(batch, spatial)


def ikl_surrogate(
    teacher: VelocityModel,
    aux: VelocityModel,
    op: ForwardOperator,
    clean_batch: PatchBatch,
    rng: np.random.Generator,
    t_clamp: float = DEFAULT_T_CLAMP,
    time_weight: str = "velocity",
) -> SurrogateTerms:
    """Scalar whose gradient w.r.t. the operator is the IKL gradient estimate."""
    if time_weight not in TIME_WEIGHTS:
        raise ValueError(f"time_weight must be one of {TIME_WEIGHTS}, got {time_weight!r}")
    y1 = apply(op, clean_batch, rng)
    b = y1.shape[0]
    t = sample_times(rng, b, t_clamp)
    y0 = rng.standard_normal(y1.shape).astype(y1.dtype, copy=False)
    tc = t.reshape((-1,) + (1,) * (y1.ndim - 1)).astype(y1.dtype)
    yt = y1 * tc + (1.0 - tc) * y0

    z = Tensor._wrap(yt.data.copy())
    with no_grad():
        v_prior = teacher(z, t, _model_conditioning(teacher, clean_batch, y1.shape[2:])).data
        v_aux = aux(z, t, _model_conditioning(aux, clean_batch, y1.shape[2:])).data
    diff = (v_aux - v_prior).astype(y1.dtype, copy=False)
    if time_weight == "score":
        diff = diff * (tc / (1.0 - tc))
    surrogate = (yt * diff).reshape(b, -1).sum(axis=1).mean()
    return SurrogateTerms(surrogate=surrogate, y1=y1, t=t, diff=diff)


def ikl_op_gradient(
    state,
    clean_batch: PatchBatch,
    rng: np.random.Generator,
    t_clamp: float = DEFAULT_T_CLAMP,
    time_weight: str = "velocity",
) -> Dict[str, np.ndarray]:
    """Monte-Carlo IKL gradient for every operator parameter.

    ``state`` is anything with ``teacher``, ``aux`` and ``op`` attributes.
    Existing gradients on the operator are discarded.
    """
    op = state.op
    op.zero_grad()
    terms = ikl_surrogate(state.teacher, state.aux, op, clean_batch, rng, t_clamp, time_weight)
    terms.surrogate.backward()
    grads = {}
    for name, p in op.named_parameters().items():
        grads[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
    op.zero_grad()
    return grads
