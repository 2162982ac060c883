"""
Oracle suite
============

Runs every closed-form check and collects one row per case:
``check, case, value, threshold, passed``.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..autodiff import Tensor
from ..core.config import OracleConfig
from ..core.errors import OracleCheckFailure
from ..flow import score_from_velocity
from ..metrics import kernel_ncc
from .gaussian import (
    GaussianModel,
    GaussianVelocityField,
    LinearOp,
    analytic_score,
    ikl_exact,
    pushforward,
    random_orthogonal,
    random_spd,
    sym_sqrt,
)
from .gradient import ikl_gradient_check
from .identifiability import (
    align_up_to_rotation,
    identify_from_covariance,
    verify_moment_identity,
)

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["check", "case", "value", "threshold", "passed"]
SCORE_TOLERANCE = 1e-10
ROTATION_TOLERANCE = 1e-8
PROCRUSTES_TOLERANCE = 1e-8
POSITIVE_PAIRS = 50


def _row(check: str, case: str, value: float, threshold: float, passed: bool) -> Dict[str, Any]:
    return {
        "check": check,
        "case": case,
        "value": float(value),
        "threshold": float(threshold),
        "passed": bool(passed),
    }


def _random_gaussian(d: int, rng: np.random.Generator) -> GaussianModel:
    return GaussianModel(rng.normal(0.0, 0.5, size=d), random_spd(d, rng))


def check_score_identity(cfg: OracleConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    rows = []
    for d in cfg.dims:
        g = _random_gaussian(d, rng)
        field = GaussianVelocityField(g)
        worst = 0.0
        for t in np.linspace(0.0, 0.9, 20):
            z = rng.standard_normal((1, d))
            induced = score_from_velocity(field, Tensor(z), np.array([t])).data
            exact = analytic_score(g, t, z)
            err = np.linalg.norm(induced - exact) / max(np.linalg.norm(exact), 1e-300)
            worst = max(worst, float(err))
        rows.append(_row("score_identity", f"d={d}", worst, SCORE_TOLERANCE, worst < SCORE_TOLERANCE))
    return rows


def check_ikl_basics(cfg: OracleConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    rows = []
    d = max(cfg.dims)
    g = _random_gaussian(d, rng)
    self_ikl = abs(ikl_exact(g, g, cfg.quadrature_points, cfg.t_clamp))
    rows.append(_row("ikl_self_zero", f"d={d}", self_ikl, 1e-12, self_ikl < 1e-12))
    smallest = np.inf
    for _ in range(POSITIVE_PAIRS):
        dim = int(rng.choice(cfg.dims))
        value = ikl_exact(
            _random_gaussian(dim, rng), _random_gaussian(dim, rng), cfg.quadrature_points, cfg.t_clamp
        )
        smallest = min(smallest, value)
    rows.append(
        _row("ikl_positive", f"{POSITIVE_PAIRS} pairs", smallest, 0.0, smallest > 0.0)
    )
    return rows


def check_gradient(cfg: OracleConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    rows = []
    for d in cfg.dims:
        data = GaussianModel(np.zeros(d), np.eye(d) if d == 1 else random_spd(d, rng))
        for a in cfg.amplitudes:
            report = ikl_gradient_check(data, a, 1.0, cfg, rng)
            case = f"d={d},a={a:g}"
            rows.append(
                _row(
                    "ikl_gradient",
                    case,
                    report.relative_error,
                    cfg.gradient_tolerance,
                    report.relative_error < cfg.gradient_tolerance,
                )
            )
            rows.append(_row("ikl_gradient_sign", case, report.monte_carlo, 0.0, report.sign_ok))
    return rows


def check_rotation_invariance(cfg: OracleConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    d = max(cfg.dims)
    data = GaussianModel.standard(d)
    a_star = rng.standard_normal((d, d))
    reference = pushforward(LinearOp(rng.standard_normal((d, d))), data, cfg.sigma)
    base = ikl_exact(
        pushforward(LinearOp(a_star), data, cfg.sigma), reference, cfg.quadrature_points, cfg.t_clamp
    )
    worst = 0.0
    for _ in range(cfg.rotation_trials):
        rotated = LinearOp(a_star @ random_orthogonal(d, rng))
        value = ikl_exact(
            pushforward(rotated, data, cfg.sigma), reference, cfg.quadrature_points, cfg.t_clamp
        )
        worst = max(worst, abs(value - base))
    return [
        _row(
            "rotation_invariance",
            f"d={d},trials={cfg.rotation_trials}",
            worst,
            ROTATION_TOLERANCE,
            worst < ROTATION_TOLERANCE,
        )
    ]


def check_procrustes(cfg: OracleConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    rows = []
    for d in cfg.dims:
        cov = random_spd(d, rng)
        a_star = rng.standard_normal((d, d)) + 2.0 * np.eye(d)
        q = random_orthogonal(d, rng)
        a_w = a_star @ sym_sqrt(cov) @ q @ sym_sqrt(cov, inverse=True)
        p, residual = align_up_to_rotation(a_w, a_star, cov)
        ok = residual < PROCRUSTES_TOLERANCE and np.allclose(p, q, atol=1e-6)
        rows.append(_row("procrustes", f"d={d}", residual, PROCRUSTES_TOLERANCE, ok))
    return rows


def moment_gate(z_scores: Sequence[float]) -> bool:
    """Monte Carlo agrees with the trace side on a batch of instances.

    Each z-score is close to standard normal when the identity holds, so one
    instance in twenty may fall outside 3 standard errors. None may fall
    outside 4.
    """
    z = np.asarray(z_scores, dtype=np.float64)
    allowed = max(1, z.size // 20)
    return int(np.sum(z > 3.0)) <= allowed and bool(np.all(z <= 4.0))


def check_moment_identity(cfg: OracleConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    d = max(cfg.dims)
    z_scores = []
    for _ in range(cfg.moment_trials):
        report = verify_moment_identity(
            rng.standard_normal((d, d)),
            rng.standard_normal((d, d)),
            random_spd(d, rng),
            rng,
            samples=cfg.moment_samples,
            sigma=cfg.sigma,
        )
        z_scores.append(report.z_score)
    ok = moment_gate(z_scores)

    a_star = rng.standard_normal((d, d))
    witness = verify_moment_identity(
        a_star @ random_orthogonal(d, rng), a_star, np.eye(d), rng, samples=cfg.moment_samples
    )
    return [
        _row("moment_identity", f"d={d},trials={cfg.moment_trials}", float(max(z_scores)), 4.0, ok),
        _row(
            "moment_rotation_witness",
            f"d={d}",
            witness.z_score,
            3.0,
            abs(witness.exact) < 1e-10 and witness.within(3.0),
        ),
    ]


def check_circulant_identification(
    cfg: OracleConfig, rng: Optional[np.random.Generator] = None
) -> List[Dict[str, Any]]:
    d = cfg.ring_size
    ring = LinearOp.circulant(cfg.ring_kernel, d)
    cov_y = pushforward(ring, GaussianModel.standard(d), cfg.sigma).cov
    report = identify_from_covariance(cov_y, np.eye(d), cfg.sigma)
    truth = np.fft.fftshift(ring.matrix[:, 0])
    ncc = kernel_ncc(report.centred_kernel(), truth, max_shift=min(5, d // 2), flip=True)
    ok = ncc > 1.0 - 1e-9 and report.nonnegative and report.unique is not False
    return [_row("circulant_identification", f"ring={d}", ncc, 1.0 - 1e-9, ok)]


CHECKS = (
    check_score_identity,
    check_ikl_basics,
    check_gradient,
    check_rotation_invariance,
    check_procrustes,
    check_moment_identity,
    check_circulant_identification,
)


def run_oracle_suite(cfg: Optional[OracleConfig] = None, seed: int = 0) -> pd.DataFrame:
    """Every oracle check as one table; never raises on a failed check."""
    cfg = cfg or OracleConfig()
    rng = np.random.default_rng(seed)
    rows: List[Dict[str, Any]] = []
    for check in CHECKS:
        logger.info("oracle: %s", check.__name__)
        rows.extend(check(cfg, rng))
    report = pd.DataFrame.from_records(rows, columns=REPORT_COLUMNS)
    logger.info("oracle: %d/%d case(s) passed", int(report["passed"].sum()), len(report))
    return report


def assert_passed(report: pd.DataFrame) -> None:
    failed = report[~report["passed"]]
    if not failed.empty:
        cases = ", ".join(f"{r.check}[{r.case}]" for r in failed.itertuples())
        raise OracleCheckFailure(f"{len(failed)} oracle case(s) failed: {cases}")


def write_report(report: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(path, index=False, float_format="%.6g")
    return path
