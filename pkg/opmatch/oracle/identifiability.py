"""
Identifiability in the linear Gaussian regime
=============================================

Matching the law of ``A_w x + eps`` to that of ``A_* x + eps`` for
``x ~ N(0, S)`` only pins down ``A_w S A_w^T``. Hence

    A_w = A_* S^{1/2} P S^{-1/2}

for some orthogonal ``P``. The helpers here witness the ambiguity, recover
``P`` and show how structural constraints (circulant, centred,
non-negative kernels) can collapse it.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from ..core.errors import ShapeError
from .gaussian import LinearOp, sym_sqrt

logger = logging.getLogger(__name__)

MAX_FREE_FREQUENCIES = 16
NONNEG_TOLERANCE = 1e-9


def _matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, LinearOp) else np.atleast_2d(np.asarray(op, dtype=np.float64))


# ============================================================================
# MOMENT IDENTITY
# ============================================================================


@dataclass
class MomentReport:
    """Monte-Carlo vs exact value of ``E f(A_w x + e) - E f(A_* x + e)``."""

    monte_carlo: float
    exact: float
    standard_error: float
    samples: int

    @property
    def z_score(self) -> float:
        gap = abs(self.monte_carlo - self.exact)
        if self.standard_error == 0.0:
            return 0.0 if gap < 1e-12 else float("inf")
        return gap / self.standard_error

    def within(self, n_se: float = 3.0) -> bool:
        return self.z_score <= n_se

    @property
    def relative_error(self) -> float:
        return abs(self.monte_carlo - self.exact) / max(abs(self.exact), 1e-12)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out.update(z_score=self.z_score, relative_error=self.relative_error)
        return out


def verify_moment_identity(
    a_w,
    a_star,
    cov: np.ndarray,
    rng: np.random.Generator,
    quad: Optional[np.ndarray] = None,
    samples: int = 20000,
    sigma: float = 0.0,
) -> MomentReport:
    """Check ``E f(A_w x + e) - E f(A_* x + e) = <A_w S A_w^T - A_* S A_*^T, C>``.

    ``f(y) = y^T C y`` with ``C`` random symmetric unless given. Both
    expectations use the same draws of ``x`` and ``e``.
    """
    aw, ast = _matrix(a_w), _matrix(a_star)
    d = aw.shape[0]
    if aw.shape != ast.shape or cov.shape != (d, d):
        raise ShapeError(f"shapes disagree: A_w {aw.shape}, A_* {ast.shape}, cov {cov.shape}")
    if quad is None:
        raw = rng.standard_normal((d, d))
        quad = 0.5 * (raw + raw.T)
    x = rng.multivariate_normal(np.zeros(d), cov, size=samples, method="cholesky")
    eps = sigma * rng.standard_normal((samples, d))
    yw = x @ aw.T + eps
    ys = x @ ast.T + eps
    diffs = np.einsum("ni,ij,nj->n", yw, quad, yw) - np.einsum("ni,ij,nj->n", ys, quad, ys)
    exact = float(np.sum((aw @ cov @ aw.T - ast @ cov @ ast.T) * quad))
    se = float(diffs.std(ddof=1) / np.sqrt(samples))
    return MomentReport(float(diffs.mean()), exact, se, samples)


# ============================================================================
# ROTATION ALIGNMENT
# ============================================================================


def align_up_to_rotation(a_w, a_star, cov: np.ndarray) -> Tuple[np.ndarray, float]:
    """Best orthogonal ``P`` with ``A_w ~ A_* S^{1/2} P S^{-1/2}``.

    Solved as orthogonal Procrustes between the whitened operators
    ``A_* S^{1/2}`` and ``A_w S^{1/2}``. The residual is relative to
    ``||A_*||_F``.
    """
    aw, ast = _matrix(a_w), _matrix(a_star)
    root, inv_root = sym_sqrt(cov), sym_sqrt(cov, inverse=True)
    p, _ = linalg.orthogonal_procrustes(ast @ root, aw @ root)
    fitted = ast @ root @ p @ inv_root
    residual = linalg.norm(aw - fitted) / max(linalg.norm(ast), 1e-300)
    return p, float(residual)


def singular_value_gap(a_w, a_star, cov: np.ndarray) -> float:
    """Lower bound on the alignment residual from the whitened singular values.

    Only sharp when ``cov`` is the identity.
    """
    aw, ast = _matrix(a_w), _matrix(a_star)
    root = sym_sqrt(cov)
    sw = linalg.svdvals(aw @ root)
    ss = linalg.svdvals(ast @ root)
    return float(np.linalg.norm(sw - ss) / max(linalg.norm(ast), 1e-300))


# ============================================================================
# IDENTIFICATION FROM COVARIANCE
# ============================================================================


@dataclass
class IdentificationReport:
    """What the output covariance reveals about a circulant operator."""

    whitened_factor: np.ndarray
    magnitudes: np.ndarray
    kernel: np.ndarray
    nonnegative: bool
    candidates: Optional[int]

    @property
    def unique(self) -> Optional[bool]:
        """True when exactly one centred, symmetric, non-negative kernel fits."""
        return None if self.candidates is None else self.candidates == 1

    def centred_kernel(self) -> np.ndarray:
        """Kernel with its origin moved to index ``d // 2``."""
        return np.fft.fftshift(self.kernel)


def _symmetric_kernel(magnitudes: np.ndarray, signs: Dict[int, float]) -> np.ndarray:
    spectrum = magnitudes.copy()
    d = spectrum.shape[0]
    for j, s in signs.items():
        spectrum[j] *= s
        spectrum[(-j) % d] = spectrum[j]
    return np.real(np.fft.ifft(spectrum))


def _admissible(kernel: np.ndarray) -> bool:
    """Non-negative with its peak at the origin."""
    return bool(
        kernel.min() >= -NONNEG_TOLERANCE and kernel[0] >= kernel.max() - NONNEG_TOLERANCE
    )


def identify_from_covariance(
    cov_y: np.ndarray, cov_x: np.ndarray, sigma: float
) -> IdentificationReport:
    """Recover what ``cov_y = A S A^T + sigma^2 I`` says about ``A``.

    Without constraints only the symmetric factor ``(A S A^T)^{1/2}`` is
    known. For circulant ``A`` and circulant ``S`` the kernel spectrum's
    magnitude is known; the zero-phase candidate is symmetric about the
    origin. Candidates count as centred when their peak sits at the origin.
    All per-frequency sign patterns are enumerated (when few enough) to
    count the non-negative centred candidates.
    """
    cov_y = np.asarray(cov_y, dtype=np.float64)
    d = cov_y.shape[0]
    signal = cov_y - sigma**2 * np.eye(d)
    signal = 0.5 * (signal + signal.T)
    eig = linalg.eigvalsh(signal)
    if eig.min() < -1e-10 * max(1.0, abs(eig.max())):
        raise ValueError(
            f"cov_y - sigma^2 I is not positive semi-definite (min eigenvalue {eig.min():.3g}); "
            f"sigma={sigma} is over-estimated"
        )
    w, v = linalg.eigh(signal)
    factor = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T

    mu = np.real(np.fft.fft(signal[:, 0]))
    s_hat = np.real(np.fft.fft(np.asarray(cov_x, dtype=np.float64)[:, 0]))
    magnitudes = np.sqrt(np.clip(mu, 0.0, None) / s_hat)
    kernel = _symmetric_kernel(magnitudes, {})
    nonnegative = bool(kernel.min() >= -NONNEG_TOLERANCE)

    free = [j for j in range(1, d // 2 + 1) if magnitudes[j] > 1e-6 * magnitudes.max()]
    candidates: Optional[int] = None
    if len(free) <= MAX_FREE_FREQUENCIES:
        candidates = 0
        for pattern in itertools.product((1.0, -1.0), repeat=len(free)):
            k = _symmetric_kernel(magnitudes, dict(zip(free, pattern)))
            candidates += int(_admissible(k))
    logger.debug(
        "identified ring kernel from covariance: %d free frequencies, %s candidate(s)",
        len(free),
        candidates,
    )
    return IdentificationReport(factor, magnitudes, kernel, nonnegative, candidates)
