"""
Closed-form Gaussian flows
==========================

For data ``y1 ~ N(m, C)`` and the linear path ``y_t = (1 - t) y0 + t y1``
with ``y0 ~ N(0, I)`` every quantity the learning method estimates by
sampling has an exact expression: the marginal at ``t``, its score, the
optimal velocity field and the time-integrated KL between two such flows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import ortho_group

from ..autodiff import Tensor
from ..core.errors import OracleCheckFailure, ShapeError
from ..flow import DEFAULT_T_CLAMP

logger = logging.getLogger(__name__)

MAX_DIM = 64
PD_TOLERANCE = 1e-10


# ============================================================================
# TYPES
# ============================================================================


@dataclass
class GaussianModel:
    """``N(mean, cov)`` in ``d <= 64`` dimensions."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (d, d):
            raise ShapeError(f"mean {self.mean.shape} and cov {self.cov.shape} disagree")
        if d > MAX_DIM:
            raise ValueError(f"dimension {d} exceeds the oracle cap of {MAX_DIM}")
        if not np.allclose(self.cov, self.cov.T, atol=PD_TOLERANCE):
            raise ValueError("cov must be symmetric")
        if linalg.eigvalsh(self.cov).min() <= PD_TOLERANCE:
            raise ValueError("cov must be positive definite")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def standard(cls, d: int) -> "GaussianModel":
        return cls(np.zeros(d), np.eye(d))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.cov, size=n, method="cholesky")


@dataclass
class LinearOp:
    """A ``d x d`` linear operator, optionally circulant with a generating kernel.

    ``kernel`` is centred (odd length); the matrix then applies circular
    convolution with it.
    """

    matrix: np.ndarray
    kernel: Optional[np.ndarray] = None

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ShapeError(f"operator must be square, got {self.matrix.shape}")
        if self.kernel is not None:
            self.kernel = np.asarray(self.kernel, dtype=np.float64)
            expected = circulant_matrix(self.kernel, self.dim)
            if not np.allclose(self.matrix, expected):
                raise ValueError("matrix is not the circulant embedding of its kernel")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_circulant(self) -> bool:
        return self.kernel is not None

    @classmethod
    def circulant(cls, kernel: Sequence[float], d: int) -> "LinearOp":
        kernel = np.asarray(kernel, dtype=np.float64)
        return cls(circulant_matrix(kernel, d), kernel)

    @classmethod
    def scaled_identity(cls, a: float, d: int) -> "LinearOp":
        return cls(a * np.eye(d))

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        return self.matrix @ other


def circulant_column(kernel: np.ndarray, d: int) -> np.ndarray:
    """First column of the circulant matrix of a centred kernel on a ring of ``d``."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1 or kernel.shape[0] % 2 == 0:
        raise ShapeError(f"ring kernel must be 1-D with odd length, got {kernel.shape}")
    if kernel.shape[0] > d:
        raise ShapeError(f"kernel length {kernel.shape[0]} exceeds ring size {d}")
    half = kernel.shape[0] // 2
    col = np.zeros(d)
    for i, value in enumerate(kernel):
        col[(i - half) % d] += value
    return col


def circulant_matrix(kernel: np.ndarray, d: int) -> np.ndarray:
    return linalg.circulant(circulant_column(kernel, d))


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    if d == 1:
        return np.array([[rng.choice([-1.0, 1.0])]])
    return ortho_group.rvs(d, random_state=rng)


def random_spd(d: int, rng: np.random.Generator, low: float = 0.5, high: float = 1.5) -> np.ndarray:
    """Random covariance with eigenvalues uniform on ``[low, high]``."""
    q = random_orthogonal(d, rng)
    return (q * rng.uniform(low, high, size=d)) @ q.T


def sym_sqrt(matrix: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Symmetric square root (or inverse square root) of an SPD matrix."""
    w, v = linalg.eigh(matrix)
    if w.min() <= 0:
        raise ValueError("matrix is not positive definite")
    power = -0.5 if inverse else 0.5
    return (v * w**power) @ v.T


# ============================================================================
# FLOW PATH
# ============================================================================


def pushforward(op: LinearOp, data: GaussianModel, sigma: float = 0.0) -> GaussianModel:
    """Law of ``A x + eps`` for ``x ~ data`` and ``eps ~ N(0, sigma^2 I)``."""
    a = op.matrix
    if a.shape[1] != data.dim:
        raise ShapeError(f"operator {a.shape} cannot act on dimension {data.dim}")
    cov = a @ data.cov @ a.T + sigma**2 * np.eye(a.shape[0])
    return GaussianModel(a @ data.mean, 0.5 * (cov + cov.T))


def marginal_at_t(g: GaussianModel, t: float) -> GaussianModel:
    """Exact marginal ``N(t m, (1 - t)^2 I + t^2 C)`` of ``y_t``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"flow time must lie in [0, 1], got {t}")
    cov = (1.0 - t) ** 2 * np.eye(g.dim) + t**2 * g.cov
    return GaussianModel(t * g.mean, cov)


def analytic_score(g: GaussianModel, t: float, z: np.ndarray) -> np.ndarray:
    """``-(cov_t)^{-1} (z - t m)`` for ``z`` of shape ``[d]`` or ``[n, d]``."""
    m_t = marginal_at_t(g, t)
    z = np.asarray(z, dtype=np.float64)
    centred = np.atleast_2d(z) - m_t.mean
    score = -linalg.solve(m_t.cov, centred.T, assume_a="pos").T
    return score.reshape(z.shape)


def analytic_velocity(g: GaussianModel, t: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Loss-minimising CFM velocity ``E[y1 - y0 | y_t = z]`` for ``z: [n, d]``.

    ``v = m + (t C - (1 - t) I) cov_t^{-1} (z - t m)``, evaluated in the
    eigenbasis of ``C``; ``t`` is a scalar or one time per row.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    times = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (z.shape[0],))[:, None]
    lam, q = linalg.eigh(g.cov)
    gain = (times * lam - (1.0 - times)) / ((1.0 - times) ** 2 + times**2 * lam)
    centred = (z - times * g.mean) @ q
    return g.mean + (gain * centred) @ q.T


class GaussianVelocityField:
    """Exact velocity field of a Gaussian target, usable wherever a trained model is.

    Inputs of any shape ``[B, ...]`` are flattened to ``[B, d]``.
    """

    def __init__(self, target: GaussianModel):
        self.target = target

    def __call__(self, z, t, cond=None) -> Tensor:
        data = np.asarray(getattr(z, "data", z), dtype=np.float64)
        flat = data.reshape(data.shape[0], -1)
        if flat.shape[1] != self.target.dim:
            raise ShapeError(f"input has {flat.shape[1]} values per sample, target has {self.target.dim}")
        v = analytic_velocity(self.target, t, flat)
        return Tensor._wrap(v.reshape(data.shape))

    forward = __call__

    def __repr__(self) -> str:
        return f"GaussianVelocityField(d={self.target.dim})"


# ============================================================================
# DIVERGENCES
# ============================================================================


def kl_divergence(p: GaussianModel, q: GaussianModel) -> float:
    """``KL(p || q)`` between two Gaussians."""
    if p.dim != q.dim:
        raise ShapeError(f"dimensions differ: {p.dim} vs {q.dim}")
    try:
        cq = linalg.cho_factor(q.cov)
        cp = linalg.cho_factor(p.cov)
    except linalg.LinAlgError as exc:
        raise OracleCheckFailure(f"non positive-definite covariance in KL: {exc}") from exc
    diff = q.mean - p.mean
    trace = np.trace(linalg.cho_solve(cq, p.cov))
    maha = diff @ linalg.cho_solve(cq, diff)
    logdet_q = 2.0 * np.sum(np.log(np.diag(cq[0])))
    logdet_p = 2.0 * np.sum(np.log(np.diag(cp[0])))
    return float(0.5 * (trace + maha - p.dim + logdet_q - logdet_p))


def ikl_exact(
    g1: GaussianModel,
    g2: GaussianModel,
    quadrature_points: int = 64,
    t_clamp: float = DEFAULT_T_CLAMP,
) -> float:
    """``integral_{delta}^{1 - delta} KL(g1_t || g2_t) dt`` by Gauss-Legendre quadrature."""
    nodes, weights = np.polynomial.legendre.leggauss(quadrature_points)
    lo, hi = t_clamp, 1.0 - t_clamp
    half = 0.5 * (hi - lo)
    times = lo + half * (nodes + 1.0)
    values = [kl_divergence(marginal_at_t(g1, t), marginal_at_t(g2, t)) for t in times]
    return float(half * np.dot(weights, values))
