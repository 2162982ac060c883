"""
opmatch.oracle - closed-form Gaussian checks of the matching method.
"""

from .gaussian import (
    GaussianModel,
    GaussianVelocityField,
    LinearOp,
    analytic_score,
    analytic_velocity,
    circulant_matrix,
    ikl_exact,
    kl_divergence,
    marginal_at_t,
    pushforward,
    random_orthogonal,
    random_spd,
    sym_sqrt,
)
from .gradient import GradientReport, ikl_gradient_check, scalar_ikl
from .identifiability import (
    IdentificationReport,
    MomentReport,
    align_up_to_rotation,
    identify_from_covariance,
    singular_value_gap,
    verify_moment_identity,
)
from .suite import REPORT_COLUMNS, assert_passed, moment_gate, run_oracle_suite, write_report

__all__ = [
    # Types
    "GaussianModel",
    "LinearOp",
    "GaussianVelocityField",
    # Flow path
    "marginal_at_t",
    "analytic_score",
    "analytic_velocity",
    "pushforward",
    "kl_divergence",
    "ikl_exact",
    # Identifiability
    "verify_moment_identity",
    "MomentReport",
    "align_up_to_rotation",
    "singular_value_gap",
    "identify_from_covariance",
    "IdentificationReport",
    # Gradient
    "ikl_gradient_check",
    "GradientReport",
    "scalar_ikl",
    # Helpers
    "circulant_matrix",
    "random_orthogonal",
    "random_spd",
    "sym_sqrt",
    # Suite
    "run_oracle_suite",
    "assert_passed",
    "moment_gate",
    "write_report",
    "REPORT_COLUMNS",
]
