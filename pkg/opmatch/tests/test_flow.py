"""
Tests for flow matching
=======================

Linear-path CFM loss, Euler sampling, the score identity and velocity
network bookkeeping (copies, EMA, checkpoints).
"""

import numpy as np
import pytest

from opmatch.autodiff import Adam, Tensor, save_archive
from opmatch.core.config import ArchConfig
from opmatch.core.errors import ShapeError
from opmatch.flow import (
    FlowState,
    VelocityField,
    cfm_loss,
    ema_update,
    sample,
    sample_times,
    score_from_velocity,
    sinusoidal_embedding,
)
from opmatch.oracle import GaussianModel, GaussianVelocityField, analytic_score, random_spd


class ZeroVelocity:
    def __call__(self, z, t, cond=None):
        return Tensor(np.zeros_like(z.data))


@pytest.fixture
def small_field(tiny_arch):
    return VelocityField(tiny_arch, seed=11)


class TestCFMLoss:
    """The regression loss on the linear path"""

    def test_needs_rng_without_fixed_draws(self, small_field):
        """Missing z0/t and rng is an error"""
        with pytest.raises(ValueError):
            cfm_loss(small_field, Tensor(np.zeros((2, 1, 4, 4))))

    def test_shape_mismatch(self, small_field):
        """z0 must match z1"""
        with pytest.raises(ShapeError):
            cfm_loss(
                small_field,
                Tensor(np.zeros((2, 1, 4, 4))),
                z0=np.zeros((2, 1, 4, 5)),
                t=np.array([0.5, 0.5]),
            )

    def test_zero_velocity_loss(self):
        """With v = 0 the loss is the mean squared displacement"""
        z1 = np.ones((3, 1, 2, 2))
        z0 = np.zeros((3, 1, 2, 2))
        loss = cfm_loss(ZeroVelocity(), Tensor(z1), z0=z0, t=np.full(3, 0.4))
        assert loss.item() == pytest.approx(4.0)

    def test_sample_times_in_clamped_interval(self, rng):
        """Times are drawn from [delta, 1 - delta]"""
        t = sample_times(rng, 1000, 0.1)
        assert t.min() >= 0.1 and t.max() <= 0.9

    def test_training_reduces_loss(self, small_field, rng):
        """A few Adam steps lower the loss on a fixed batch"""
        z1 = Tensor(rng.standard_normal((4, 1, 6, 6)) * 0.1 + 0.5)
        z0 = rng.standard_normal(z1.shape)
        t = rng.uniform(0.1, 0.9, 4)
        opt = Adam(small_field.parameters(), lr=1e-2)
        first = None
        for _ in range(30):
            opt.zero_grad()
            loss = cfm_loss(small_field, z1, z0=z0, t=t)
            first = loss.item() if first is None else first
            loss.backward()
            opt.step()
        assert loss.item() < first


class TestSampling:
    """Euler integration"""

    def test_zero_field_keeps_noise(self, rng):
        """dz = 0 leaves the initial draw unchanged"""
        z0 = rng.standard_normal((2, 1, 3, 3))
        out = sample(ZeroVelocity(), 2, steps=5, z0=z0)
        np.testing.assert_array_equal(out.data, z0)

    def test_needs_positive_steps(self, rng):
        """Zero steps is rejected"""
        with pytest.raises(ValueError):
            sample(ZeroVelocity(), 1, steps=0, z0=np.zeros((1, 1, 2, 2)))

    def test_gaussian_field_transports_to_target(self, rng):
        """Exact velocity moves N(0, I) onto the target law"""
        target = GaussianModel(np.array([1.0, -0.5]), np.diag([0.25, 2.0]))
        field = GaussianVelocityField(target)
        out = sample(field, 4000, steps=200, rng=rng, shape=(1, 1, 2)).data.reshape(-1, 2)
        np.testing.assert_allclose(out.mean(axis=0), target.mean, atol=0.08)
        np.testing.assert_allclose(np.cov(out.T), target.cov, atol=0.15)

    def test_flow_state_time_range(self):
        """Flow time must lie in [0, 1]"""
        with pytest.raises(ValueError):
            FlowState(z=Tensor(np.zeros(1)), t=1.5)


class TestScoreFromVelocity:
    """The score implied by a velocity field"""

    def test_time_zero_is_minus_z(self, small_field, rng):
        """At t = 0 the score is -z whatever the network"""
        z = Tensor(rng.standard_normal((2, 1, 4, 4)))
        s = score_from_velocity(small_field, z, 0.0)
        np.testing.assert_allclose(s.data, -z.data)

    @pytest.mark.parametrize("d", [1, 2, 4])
    def test_matches_analytic_score(self, rng, d):
        """Exact Gaussian velocity gives the exact Gaussian score"""
        g = GaussianModel(rng.normal(0.0, 0.5, d), random_spd(d, rng))
        field = GaussianVelocityField(g)
        for t in np.linspace(0.0, 0.9, 10):
            z = rng.standard_normal((3, d))
            induced = score_from_velocity(field, Tensor(z), t).data
            exact = analytic_score(g, t, z)
            assert np.linalg.norm(induced - exact) <= 1e-10 * np.linalg.norm(exact)

    def test_clamps_near_one(self, caplog):
        """Times above 1 - delta are clamped with a warning"""
        field = GaussianVelocityField(GaussianModel.standard(2))
        with caplog.at_level("WARNING"):
            s = score_from_velocity(field, Tensor(np.ones((1, 2))), 1.0, t_clamp=0.01)
        assert np.all(np.isfinite(s.data))
        assert "clamped" in caplog.text

    @pytest.mark.slow
    def test_trained_network_score(self, rng):
        """A small trained net recovers the score of 2-D Gaussian data"""
        target = GaussianModel(np.array([0.5, -0.5]), np.array([[0.5, 0.2], [0.2, 0.3]]))
        model = VelocityField(ArchConfig(hidden=32, depth=4, time_embed_dim=16), seed=0)
        opt = Adam(model.parameters(), lr=3e-3)
        for _ in range(3000):
            z1 = Tensor(target.sample(128, rng).reshape(128, 1, 1, 2))
            opt.zero_grad()
            loss = cfm_loss(model, z1, rng=rng, t_clamp=0.05)
            loss.backward()
            opt.step()
        errors = []
        for t in (0.1, 0.3, 0.5):
            z = rng.standard_normal((256, 2)) * 0.8
            induced = score_from_velocity(model, Tensor(z.reshape(256, 1, 1, 2)), t).data
            errors.append(np.abs(induced.reshape(256, 2) - analytic_score(target, t, z)).mean())
        assert max(errors) < 0.05


class TestVelocityField:
    """Parameter bookkeeping"""

    def test_sinusoidal_embedding_shape(self):
        """[B] times give [B, dim] features"""
        emb = sinusoidal_embedding(np.array([0.0, 0.5, 1.0]), 8)
        assert emb.shape == (3, 8)
        np.testing.assert_allclose(emb[0, 4:], 1.0)

    def test_output_shape(self, small_field, rng):
        """Velocity has the input shape"""
        z = Tensor(rng.standard_normal((2, 1, 5, 7)))
        assert small_field(z, np.array([0.1, 0.9])).shape == (2, 1, 5, 7)

    def test_conditioning_mismatch(self, small_field):
        """Conditioning channels must match the architecture"""
        with pytest.raises(ShapeError, match="conditioning channel"):
            small_field(Tensor(np.zeros((1, 1, 4, 4))), 0.5, Tensor(np.zeros((1, 2, 4, 4))))

    def test_copy_is_independent(self, small_field):
        """Updating a copy leaves the original untouched"""
        before = small_field.checksum()
        clone = small_field.copy()
        clone.params["conv_in.bias"].data += 1.0
        assert small_field.checksum() == before
        assert clone.checksum() != before

    def test_ema_update(self, small_field):
        """EMA moves toward the live weights by 1 - decay"""
        name = "conv_in.bias"
        small_field.params[name].data[:] = 1.0
        ema_update(small_field, 0.75)
        np.testing.assert_allclose(small_field.ema_params[name], 0.25)

    def test_ema_decay_range(self, small_field):
        """Decay outside [0, 1] is rejected"""
        with pytest.raises(ValueError):
            ema_update(small_field, 1.5)

    def test_ema_model_is_frozen(self, small_field):
        """The EMA view carries no trainable parameters"""
        frozen = small_field.ema_model()
        assert not any(p.requires_grad for p in frozen.parameters())

    def test_checkpoint_round_trip(self, small_field, tmp_path):
        """Saved and reloaded networks have the same checksum"""
        small_field.save(tmp_path / "prior")
        loaded = VelocityField.load(tmp_path / "prior")
        assert loaded.checksum() == small_field.checksum()
        assert loaded.arch == small_field.arch

    def test_load_rejects_other_archives(self, tmp_path):
        """Archives of another kind are refused"""
        save_archive(tmp_path / "other", {"x": np.zeros(1)}, {"kind": "forward_operator"})
        with pytest.raises(ShapeError):
            VelocityField.load(tmp_path / "other")
