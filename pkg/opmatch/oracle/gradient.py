"""
IKL gradient cross-check
========================

With Gaussian data and a scalar operator ``A = a I`` both scores are known
exactly, so the Monte-Carlo operator gradient produced by
``distmatch.ikl_op_gradient`` can be compared with a finite difference of
the quadrature IKL.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from types import SimpleNamespace
from typing import Any, Dict, Optional

import numpy as np

from ..autodiff import Tensor
from ..core.config import OracleConfig
from ..core.datatypes import PatchBatch
from ..distmatch.ikl import ikl_op_gradient
from ..operators.forward import NoiseModel, UniformKernelOperator
from .gaussian import (
    GaussianModel,
    GaussianVelocityField,
    LinearOp,
    ikl_exact,
    pushforward,
)

logger = logging.getLogger(__name__)


@dataclass
class GradientReport:
    dim: int
    amplitude: float
    target_amplitude: float
    finite_difference: float
    monte_carlo: float
    standard_error: float

    @property
    def relative_error(self) -> float:
        return abs(self.monte_carlo - self.finite_difference) / max(
            abs(self.finite_difference), 1e-12
        )

    @property
    def sign_ok(self) -> bool:
        """Gradient points away from the true amplitude."""
        expected = np.sign(self.amplitude - self.target_amplitude)
        return bool(np.sign(self.monte_carlo) == expected == np.sign(self.finite_difference))

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out.update(relative_error=self.relative_error, sign_ok=self.sign_ok)
        return out


def scalar_ikl(
    a: float,
    a_star: float,
    data: GaussianModel,
    sigma: float,
    quadrature_points: int,
    t_clamp: float,
) -> float:
    d = data.dim
    current = pushforward(LinearOp.scaled_identity(a, d), data, sigma)
    target = pushforward(LinearOp.scaled_identity(a_star, d), data, sigma)
    return ikl_exact(current, target, quadrature_points, t_clamp)


def ikl_gradient_check(
    data: GaussianModel,
    amplitude: float,
    target_amplitude: float = 1.0,
    cfg: Optional[OracleConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradientReport:
    """Compare ``d IKL / d a`` by Monte-Carlo (exact scores) and by finite differences.

    The Monte-Carlo side draws flow times uniformly on ``[delta, 1 - delta]``
    and therefore estimates the time average; it is rescaled by the
    interval length to match the integral.
    """
    cfg = cfg or OracleConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    d = data.dim
    sigma = cfg.sigma

    h = cfg.gradient_fd_step
    fd = (
        scalar_ikl(amplitude + h, target_amplitude, data, sigma, cfg.quadrature_points, cfg.t_clamp)
        - scalar_ikl(amplitude - h, target_amplitude, data, sigma, cfg.quadrature_points, cfg.t_clamp)
    ) / (2.0 * h)

    op = UniformKernelOperator(
        np.array([[amplitude]]), 1, NoiseModel(sigma), normalization="none", dtype=np.float64
    )
    state = SimpleNamespace(
        op=op,
        teacher=GaussianVelocityField(
            pushforward(LinearOp.scaled_identity(target_amplitude, d), data, sigma)
        ),
        aux=GaussianVelocityField(pushforward(LinearOp.scaled_identity(amplitude, d), data, sigma)),
    )
    estimates = []
    remaining = cfg.gradient_samples
    while remaining > 0:
        n = min(cfg.gradient_batch, remaining)
        x = data.sample(n, rng).reshape(n, 1, 1, d)
        batch = PatchBatch(pixels=Tensor(x, dtype=np.float64))
        grads = ikl_op_gradient(state, batch, rng, cfg.t_clamp, time_weight="score")
        estimates.append(float(grads["kernel"].sum()))
        remaining -= n
    scale = 1.0 - 2.0 * cfg.t_clamp
    estimates = np.asarray(estimates) * scale
    se = float(estimates.std(ddof=1) / np.sqrt(len(estimates))) if len(estimates) > 1 else float("nan")
    report = GradientReport(d, amplitude, target_amplitude, float(fd), float(estimates.mean()), se)
    logger.debug(
        "IKL gradient d=%d a=%.3g: MC %.6g, FD %.6g (rel err %.3g)",
        d,
        amplitude,
        report.monte_carlo,
        report.finite_difference,
        report.relative_error,
    )
    return report
