"""
Tests for the closed-form Gaussian oracle
=========================================

Fast cases use small configurations; the full default suite runs under
the ``slow`` marker.
"""

import numpy as np
import pandas as pd
import pytest

from opmatch.core.config import OracleConfig
from opmatch.core.errors import OracleCheckFailure, ShapeError
from opmatch.oracle import (
    REPORT_COLUMNS,
    GaussianModel,
    MomentReport,
    LinearOp,
    align_up_to_rotation,
    analytic_velocity,
    assert_passed,
    identify_from_covariance,
    ikl_exact,
    ikl_gradient_check,
    kl_divergence,
    marginal_at_t,
    moment_gate,
    pushforward,
    random_orthogonal,
    random_spd,
    run_oracle_suite,
    scalar_ikl,
    singular_value_gap,
    sym_sqrt,
    verify_moment_identity,
    write_report,
)


@pytest.fixture
def gauss(rng):
    return GaussianModel(rng.normal(0.0, 0.5, 3), random_spd(3, rng))


class TestGaussianModel:
    """Types and validation"""

    def test_standard(self):
        g = GaussianModel.standard(4)
        assert g.dim == 4
        np.testing.assert_array_equal(g.cov, np.eye(4))

    def test_not_positive_definite(self):
        """Singular covariances are rejected"""
        with pytest.raises(ValueError):
            GaussianModel([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])

    def test_dimension_cap(self):
        """The oracle stays small"""
        with pytest.raises(ValueError):
            GaussianModel.standard(65)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            GaussianModel([0.0, 0.0], np.eye(3))

    def test_sample_moments(self, gauss, rng):
        """Samples follow the declared law"""
        x = gauss.sample(20000, rng)
        np.testing.assert_allclose(x.mean(axis=0), gauss.mean, atol=0.05)
        np.testing.assert_allclose(np.cov(x.T), gauss.cov, atol=0.08)


class TestLinearOp:
    """Dense and circulant operators"""

    def test_circulant_rows(self):
        """Every row of a ring blur carries the kernel"""
        op = LinearOp.circulant([0.25, 0.5, 0.25], 8)
        np.testing.assert_allclose(op.matrix.sum(axis=1), 1.0)
        assert op.matrix[0, 0] == 0.5
        assert op.matrix[0, 7] == 0.25 and op.matrix[0, 1] == 0.25
        assert op.is_circulant

    def test_inconsistent_kernel(self):
        """A matrix must match the kernel it claims"""
        with pytest.raises(ValueError):
            LinearOp(np.eye(4), kernel=np.array([0.25, 0.5, 0.25]))

    def test_even_kernel(self):
        with pytest.raises(ShapeError):
            LinearOp.circulant([0.5, 0.5], 8)

    def test_sym_sqrt(self, rng):
        """Square and inverse square root of an SPD matrix"""
        cov = random_spd(4, rng)
        root = sym_sqrt(cov)
        np.testing.assert_allclose(root @ root, cov, atol=1e-12)
        np.testing.assert_allclose(root @ sym_sqrt(cov, inverse=True), np.eye(4), atol=1e-12)

    def test_random_orthogonal(self, rng):
        q = random_orthogonal(5, rng)
        np.testing.assert_allclose(q @ q.T, np.eye(5), atol=1e-12)


class TestFlowPath:
    """Marginals, velocities and divergences"""

    def test_marginal_endpoints(self, gauss):
        """Noise at t=0, data at t=1"""
        start = marginal_at_t(gauss, 0.0)
        np.testing.assert_allclose(start.mean, 0.0)
        np.testing.assert_allclose(start.cov, np.eye(3))
        end = marginal_at_t(gauss, 1.0)
        np.testing.assert_allclose(end.mean, gauss.mean)
        np.testing.assert_allclose(end.cov, gauss.cov)

    def test_marginal_time_range(self, gauss):
        with pytest.raises(ValueError):
            marginal_at_t(gauss, 1.2)

    def test_velocity_at_start(self, gauss, rng):
        """At t=0 the optimal velocity is ``m - z``"""
        z = rng.standard_normal((5, 3))
        np.testing.assert_allclose(analytic_velocity(gauss, 0.0, z), gauss.mean - z, atol=1e-12)

    def test_pushforward_scaled_identity(self):
        """``a x + eps`` has covariance ``(a^2 + sigma^2) I``"""
        out = pushforward(LinearOp.scaled_identity(2.0, 3), GaussianModel.standard(3), sigma=0.5)
        np.testing.assert_allclose(out.cov, 4.25 * np.eye(3))

    def test_pushforward_dimension(self):
        with pytest.raises(ShapeError):
            pushforward(LinearOp.scaled_identity(1.0, 2), GaussianModel.standard(3))

    def test_kl_properties(self, gauss, rng):
        """Zero on itself, positive otherwise"""
        other = GaussianModel(rng.normal(size=3), random_spd(3, rng))
        assert kl_divergence(gauss, gauss) == pytest.approx(0.0, abs=1e-12)
        assert kl_divergence(gauss, other) > 0.0
        with pytest.raises(ShapeError):
            kl_divergence(gauss, GaussianModel.standard(2))

    def test_kl_of_shifted_standard(self):
        """``KL(N(m, I) || N(0, I)) = |m|^2 / 2``"""
        shifted = GaussianModel([1.0, 2.0], np.eye(2))
        assert kl_divergence(shifted, GaussianModel.standard(2)) == pytest.approx(2.5)

    def test_ikl(self, gauss, rng):
        """The integrated KL vanishes only between identical flows"""
        other = GaussianModel(rng.normal(size=3), random_spd(3, rng))
        assert abs(ikl_exact(gauss, gauss)) < 1e-12
        assert ikl_exact(gauss, other) > 0.0

    def test_ikl_rotation_invariant(self, rng):
        """Rotating the operator in whitened space leaves the IKL unchanged"""
        d = 3
        data = GaussianModel.standard(d)
        a_star = rng.standard_normal((d, d))
        reference = pushforward(LinearOp(rng.standard_normal((d, d))), data, 0.1)
        base = ikl_exact(pushforward(LinearOp(a_star), data, 0.1), reference)
        rotated = LinearOp(a_star @ random_orthogonal(d, rng))
        assert ikl_exact(pushforward(rotated, data, 0.1), reference) == pytest.approx(base, abs=1e-8)


class TestIdentifiability:
    """Rotation ambiguity and structural identification"""

    def test_alignment_recovers_rotation(self, rng):
        """Procrustes finds the hidden orthogonal factor"""
        cov = random_spd(4, rng)
        a_star = rng.standard_normal((4, 4)) + 2.0 * np.eye(4)
        q = random_orthogonal(4, rng)
        a_w = a_star @ sym_sqrt(cov) @ q @ sym_sqrt(cov, inverse=True)
        p, residual = align_up_to_rotation(a_w, a_star, cov)
        assert residual < 1e-8
        np.testing.assert_allclose(p, q, atol=1e-6)

    def test_alignment_residual_for_unrelated(self, rng):
        """Unrelated operators leave a residual the singular values predict"""
        a_star = rng.standard_normal((3, 3))
        a_w = 3.0 * rng.standard_normal((3, 3))
        _, residual = align_up_to_rotation(a_w, a_star, np.eye(3))
        gap = singular_value_gap(a_w, a_star, np.eye(3))
        assert residual > 0.1
        assert gap <= residual + 1e-12

    def test_moment_identity_rotation_witness(self, rng):
        """A rotated operator has identical second moments"""
        a_star = rng.standard_normal((3, 3))
        report = verify_moment_identity(
            a_star @ random_orthogonal(3, rng), a_star, np.eye(3), rng, samples=5000
        )
        assert abs(report.exact) < 1e-10
        assert report.samples == 5000

    def test_moment_identity_within_error(self, rng):
        """Monte Carlo agrees with the closed form to a few standard errors"""
        report = verify_moment_identity(
            rng.standard_normal((3, 3)), rng.standard_normal((3, 3)), random_spd(3, rng), rng,
            samples=20000, sigma=0.1,
        )
        assert report.within(4.0)
        assert {"z_score", "relative_error"} <= set(report.to_dict())

    def test_moment_identity_shapes(self, rng):
        with pytest.raises(ShapeError):
            verify_moment_identity(np.eye(2), np.eye(3), np.eye(2), rng)

    def test_ring_kernel_from_covariance(self):
        """A symmetric non-negative ring blur is read off its output covariance"""
        ring = LinearOp.circulant([0.25, 0.5, 0.25], 8)
        cov_y = pushforward(ring, GaussianModel.standard(8), 0.1).cov
        report = identify_from_covariance(cov_y, np.eye(8), 0.1)
        np.testing.assert_allclose(
            report.centred_kernel(), np.fft.fftshift(ring.matrix[:, 0]), atol=1e-10
        )
        assert report.nonnegative
        assert report.candidates >= 1
        factor = report.whitened_factor
        np.testing.assert_allclose(factor @ factor, ring.matrix @ ring.matrix.T, atol=1e-10)

    def test_overestimated_noise(self):
        """Too much assumed noise leaves a non-PSD signal covariance"""
        ring = LinearOp.circulant([0.25, 0.5, 0.25], 8)
        cov_y = pushforward(ring, GaussianModel.standard(8), 0.1).cov
        with pytest.raises(ValueError, match="over-estimated"):
            identify_from_covariance(cov_y, np.eye(8), 2.0)


class TestGradientCheck:
    """Monte-Carlo operator gradient against finite differences"""

    def test_scalar_ikl_zero_at_truth(self):
        assert abs(scalar_ikl(1.0, 1.0, GaussianModel.standard(2), 0.1, 32, 1e-3)) < 1e-12

    @pytest.mark.parametrize("amplitude", [0.5, 2.0])
    def test_sign_agrees(self, amplitude, rng):
        """Both estimates point away from the true amplitude"""
        cfg = OracleConfig(gradient_samples=40000, gradient_batch=10000, t_clamp=0.01)
        report = ikl_gradient_check(GaussianModel.standard(1), amplitude, 1.0, cfg, rng)
        assert report.sign_ok
        assert np.isfinite(report.standard_error)
        assert {"relative_error", "sign_ok"} <= set(report.to_dict())

    @pytest.mark.slow
    def test_relative_error_default_budget(self):
        """The default sample budget lands within tolerance"""
        cfg = OracleConfig()
        report = ikl_gradient_check(GaussianModel.standard(2), 1.5, 1.0, cfg, np.random.default_rng(0))
        assert report.relative_error < cfg.gradient_tolerance


class TestSuite:
    """Oracle report"""

    @pytest.fixture
    def small_cfg(self):
        return OracleConfig(
            dims=[1, 2],
            amplitudes=[1.5],
            gradient_samples=1000,
            gradient_batch=500,
            rotation_trials=2,
            moment_trials=2,
            moment_samples=500,
        )

    def test_report_layout(self, small_cfg):
        """Every check contributes rows with fixed columns"""
        report = run_oracle_suite(small_cfg, seed=0)
        assert list(report.columns) == REPORT_COLUMNS
        assert set(report["check"]) >= {
            "score_identity",
            "ikl_self_zero",
            "ikl_positive",
            "ikl_gradient",
            "ikl_gradient_sign",
            "rotation_invariance",
            "procrustes",
            "moment_identity",
            "moment_rotation_witness",
            "circulant_identification",
        }

    def test_exact_checks_pass_small(self, small_cfg):
        """Closed-form checks pass regardless of the sample budget"""
        report = run_oracle_suite(small_cfg, seed=0).set_index("check")
        for check in ("score_identity", "ikl_self_zero", "procrustes", "circulant_identification"):
            assert report.loc[[check], "passed"].all()

    def test_deterministic(self, small_cfg):
        """Same seed, same table"""
        pd.testing.assert_frame_equal(run_oracle_suite(small_cfg, 3), run_oracle_suite(small_cfg, 3))

    def test_write_report(self, small_cfg, tmp_path):
        path = write_report(run_oracle_suite(small_cfg), tmp_path / "oracle" / "report.csv")
        assert list(pd.read_csv(path).columns) == REPORT_COLUMNS

    def test_assert_passed(self):
        """Failed rows are named in the error"""
        ok = pd.DataFrame([["a", "x", 0.0, 1.0, True]], columns=REPORT_COLUMNS)
        assert_passed(ok)
        bad = pd.concat([ok, pd.DataFrame([["b", "y", 2.0, 1.0, False]], columns=REPORT_COLUMNS)])
        with pytest.raises(OracleCheckFailure, match=r"b\[y\]"):
            assert_passed(bad)

    @pytest.mark.slow
    def test_default_suite_passes(self):
        """The full default suite passes"""
        assert_passed(run_oracle_suite(OracleConfig(), seed=0))


class TestMomentGate:
    """Batch agreement between Monte Carlo and the trace side"""

    def test_standard_normal_scores_pass(self):
        """One instance in twenty may stray past 3 standard errors"""
        assert moment_gate([0.3, 1.2, 2.9, 0.8] * 5)
        assert moment_gate([0.3] * 19 + [3.5])

    def test_two_past_three_fail(self):
        assert not moment_gate([0.3] * 18 + [3.2, 3.4])

    def test_any_past_four_fails(self):
        assert not moment_gate([0.1] * 19 + [4.2])

    def test_matched_operators_pass(self, rng):
        """Twenty consistent instances clear the gate"""
        scores = [
            verify_moment_identity(
                rng.standard_normal((3, 3)), rng.standard_normal((3, 3)), random_spd(3, rng), rng,
                samples=5000, sigma=0.1,
            ).z_score
            for _ in range(20)
        ]
        assert moment_gate(scores)

    def test_mismatched_operator_fails(self, rng):
        """Samples drawn through one operator disagree with another's trace"""
        scores = []
        for _ in range(20):
            a_w, a_star, cov = rng.standard_normal((3, 3)), rng.standard_normal((3, 3)), random_spd(3, rng)
            quad = np.diag(rng.uniform(0.5, 1.5, 3))
            drawn = verify_moment_identity(a_w, a_star, cov, rng, quad=quad, samples=5000)
            claimed = verify_moment_identity(a_w + 0.5 * np.eye(3), a_star, cov, rng, quad=quad, samples=100)
            mixed = MomentReport(drawn.monte_carlo, claimed.exact, drawn.standard_error, drawn.samples)
            scores.append(mixed.z_score)
        assert not moment_gate(scores)
