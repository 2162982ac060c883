"""
Tests for prior training and operator matching
==============================================

The IKL gradient is checked on closed-form Gaussian flows; the training
loops are run for a handful of steps on tiny configurations.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from opmatch.autodiff import Tensor
from opmatch.core.config import KernelSpec, OperatorConfig, SRConfig
from opmatch.core.datatypes import PatchBatch
from opmatch.core.errors import CorpusError, NumericalError
from opmatch.data import PatchSource, dead_leaves
from opmatch.distmatch import (
    MatchRecorder,
    MatchState,
    ikl_op_gradient,
    ikl_surrogate,
    init_aux,
    match,
    match_sr,
    output_conditioning,
    sr_operator_init,
    synthesize_pairs,
    train_prior,
)
from opmatch.distmatch.recorder import HISTORY_COLUMNS
from opmatch.flow import VelocityField
from opmatch.operators import DownscaleOperator, UniformKernelOperator, build_operator
from opmatch.oracle import GaussianModel, GaussianVelocityField


def scalar_setup(a: float, a_true: float, n: int, rng):
    """``y = a x`` on scalar pixels with exact Gaussian prior and auxiliary flows."""
    op = UniformKernelOperator(np.array([[a]]), normalization="none")
    state = SimpleNamespace(
        teacher=GaussianVelocityField(GaussianModel([0.0], [[a_true**2]])),
        aux=GaussianVelocityField(GaussianModel([0.0], [[a**2]])),
        op=op,
    )
    batch = PatchBatch(pixels=Tensor(rng.standard_normal((n, 1, 1, 1))))
    return state, batch


@pytest.fixture
def clean_source(rng):
    return PatchSource([dead_leaves(16, rng) for _ in range(2)], patch_size=8, stride=4, with_coords=False)


@pytest.fixture
def teacher(tiny_arch):
    return VelocityField(tiny_arch, seed=3)


class TestIKLGradient:
    """Monte-Carlo operator gradient"""

    def test_identical_models_give_zero(self, teacher, clean_source, rng, gaussian7):
        """No mismatch between prior and auxiliary means no gradient"""
        op = UniformKernelOperator(gaussian7)
        state = SimpleNamespace(teacher=teacher, aux=teacher, op=op)
        grads = ikl_op_gradient(state, clean_source.sample(4, rng), rng)
        assert set(grads) == {"kernel"}
        np.testing.assert_array_equal(grads["kernel"], 0.0)

    @pytest.mark.parametrize("a, expected_sign", [(1.5, 1.0), (0.6, -1.0)])
    def test_points_toward_prior(self, rng, a, expected_sign):
        """Descending the gradient moves the scale toward the prior's"""
        state, batch = scalar_setup(a, 1.0, 20000, rng)
        grads = ikl_op_gradient(state, batch, rng, t_clamp=0.01)
        assert np.sign(grads["kernel"].item()) == expected_sign

    def test_score_weighting_keeps_sign(self, rng):
        """The t/(1-t) weighting changes magnitude, not direction"""
        state, batch = scalar_setup(1.5, 1.0, 20000, rng)
        grads = ikl_op_gradient(state, batch, rng, t_clamp=0.01, time_weight="score")
        assert grads["kernel"].item() > 0

    def test_unknown_time_weight(self, teacher, clean_source, rng, gaussian7):
        """Only the documented weightings are accepted"""
        with pytest.raises(ValueError):
            ikl_surrogate(
                teacher, teacher, UniformKernelOperator(gaussian7), clean_source.sample(2, rng), rng,
                time_weight="linear",
            )

    def test_gradients_cleared_afterwards(self, rng):
        """The operator holds no stale gradient after the call"""
        state, batch = scalar_setup(1.5, 1.0, 100, rng)
        ikl_op_gradient(state, batch, rng)
        assert state.op.params["kernel"].grad is None

    def test_output_conditioning_subsamples(self, rng):
        """Positional channels follow a downscaled output"""
        source = PatchSource([dead_leaves(16, rng)], patch_size=8, stride=4)
        batch = source.sample(3, rng)
        cond = output_conditioning(batch, (4, 4))
        assert cond.shape == (3, 2, 4, 4)
        np.testing.assert_allclose(cond.data, batch.positional_channels()[:, :, ::2, ::2])


class TestPrior:
    """Teacher training"""

    def test_returns_frozen_ema_model(self, clean_source, tiny_prior, rng):
        """The result is frozen and sized for the source"""
        history = []
        model = train_prior(clean_source, tiny_prior, rng, history=history)
        assert len(history) == 3
        assert {"step", "loss", "loss_ema"} <= set(history[0])
        assert model.arch.cond_channels == 0
        assert not any(p.requires_grad for p in model.parameters())

    def test_positional_channels_with_coords(self, rng, tiny_prior):
        """Sources with coordinates get two conditioning channels"""
        source = PatchSource([dead_leaves(16, rng)], patch_size=8, stride=4)
        model = train_prior(source, tiny_prior, rng)
        assert model.arch.cond_channels == 2

    def test_deterministic(self, clean_source, tiny_prior):
        """Equal seeds give equal weights"""
        a = train_prior(clean_source, tiny_prior, np.random.default_rng(0), seed=1)
        b = train_prior(clean_source, tiny_prior, np.random.default_rng(0), seed=1)
        assert a.checksum() == b.checksum()


class TestMatch:
    """The alternating matching loop"""

    @pytest.fixture
    def op_init(self, rng):
        cfg = OperatorConfig(kernel=KernelSpec(kind="dirac", size=5))
        return build_operator(cfg, rng, learnable=True)

    def test_short_run(self, teacher, clean_source, op_init, tiny_match, rng, tmp_path):
        """Two operator steps update the kernel and leave the prior alone"""
        before_teacher = teacher.checksum()
        before_kernel = op_init.params["kernel"].data.copy()
        recorder = MatchRecorder(tmp_path, snapshot_every=1)
        op, state = match(teacher, clean_source, op_init, tiny_match, rng, recorder)
        assert state.step == 2
        assert teacher.checksum() == before_teacher
        assert not np.array_equal(op.params["kernel"].data, before_kernel)
        np.testing.assert_allclose(op.materialize_kernel().data.sum(), 1.0)
        assert [r["step"] for r in state.loss_history] == [1, 2]
        assert (tmp_path / "history.csv").exists()
        assert (tmp_path / "snapshots" / "kernel_000002.png").exists()
        assert (tmp_path / "match.png").exists()
        assert list(recorder.frame().columns[: len(HISTORY_COLUMNS)]) == HISTORY_COLUMNS

    def test_aux_starts_as_prior_copy(self, teacher):
        """The auxiliary model is a trainable copy"""
        aux = init_aux(teacher.freeze())
        assert aux.checksum() == teacher.checksum()
        assert all(p.requires_grad for p in aux.parameters())
        assert aux.params["conv_in.weight"] is not teacher.params["conv_in.weight"]

    def test_regularizers_recorded(self, teacher, clean_source, op_init, tiny_match, rng):
        """Active regularizers appear in the history"""
        cfg = tiny_match.model_copy(
            update={"reg_weights": tiny_match.reg_weights.model_copy(update={"center": 1.0})}
        )
        _, state = match(teacher, clean_source, op_init, cfg, rng)
        assert "reg_center" in state.loss_history[-1]

    def test_warmup_and_multiple_aux_steps(self, teacher, clean_source, op_init, tiny_match, rng):
        """Aux warmup and several aux steps per operator step run through"""
        cfg = tiny_match.model_copy(update={"aux_warmup_steps": 2, "aux_steps_per_op_step": 2})
        _, state = match(teacher, clean_source, op_init, cfg, rng)
        assert len(state.loss_history) == 2

    def test_grid_operator_with_positional_prior(self, tiny_prior, tiny_match, rng):
        """Spatially varying matching conditions both models on position"""
        source = PatchSource([dead_leaves(16, rng) for _ in range(2)], patch_size=8, stride=4)
        teacher = train_prior(source, tiny_prior, rng)
        cfg = OperatorConfig(variant="grid", grid_shape=(2, 2), kernel=KernelSpec(kind="dirac", size=5))
        op_init = build_operator(cfg, rng, image_extent=source.image_extent, learnable=True)
        op, state = match(teacher, source, op_init, tiny_match, rng)
        assert np.all(np.isfinite(op.node_kernels().data))
        assert state.step == 2

    def test_non_finite_aborts_with_snapshot(self, teacher, clean_source, op_init, tiny_match, rng, tmp_path):
        """NaN parameters stop the run and persist the operator"""
        op_init.params["kernel"].data[:] = np.nan
        with pytest.raises(NumericalError) as err:
            match(teacher, clean_source, op_init, tiny_match, rng, MatchRecorder(tmp_path))
        assert err.value.exit_code == 3
        assert (tmp_path / "failure_snapshot" / "index.json").exists()

    def test_teacher_tampering_detected(self, teacher, op_init):
        """A changed prior is reported"""
        state = MatchState(teacher=teacher, aux=init_aux(teacher), op=op_init)
        teacher.params["conv_in.bias"].data += 1.0
        with pytest.raises(RuntimeError):
            state.check_teacher()

    def test_in_memory_recorder(self):
        """Without an output directory nothing is written"""
        recorder = MatchRecorder(None)
        assert recorder.write_history() is None
        assert list(recorder.frame().columns) == HISTORY_COLUMNS


class TestSuperResolution:
    """Single-image kernel learning"""

    def test_operator_init(self, rng):
        """Downscaling wraps a dirac-initialised inner blur"""
        op = sr_operator_init(SRConfig(inner="uniform", kernel_size=7), 1, rng)
        assert isinstance(op, DownscaleOperator)
        assert op.scale == 2
        assert np.argmax(op.materialize_kernel().data[0]) == 24

    def test_without_downscale(self, rng):
        """Disabling downscale leaves the inner operator"""
        op = sr_operator_init(SRConfig(inner="uniform", downscale=False), 1, rng)
        assert isinstance(op, UniformKernelOperator)

    def test_too_small_image(self, rng):
        """Too few patches at either scale is an error"""
        with pytest.raises(CorpusError):
            match_sr(dead_leaves(24, rng), SRConfig(patch_size=8, min_patches=500), rng=rng)

    def test_short_run(self, rng, tiny_prior, tiny_match):
        """A tiny run learns a downscaling operator"""
        cfg = SRConfig(patch_size=4, stride=4, min_patches=4, inner="uniform", kernel_size=5)
        op, state = match_sr(dead_leaves(32, rng), cfg, tiny_prior, tiny_match, rng)
        assert isinstance(op, DownscaleOperator)
        assert state.step == 2

    def test_synthesize_pairs(self, rng, gaussian7):
        """Learned operators turn clean images into training pairs"""
        op = DownscaleOperator(UniformKernelOperator(gaussian7), scale=2)
        pairs = synthesize_pairs(op, [dead_leaves(16, rng)], rng)
        clean, degraded = pairs[0]
        assert clean.shape == (1, 16, 16)
        assert degraded.shape == (1, 8, 8)


def archive_bytes(directory) -> dict:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


class TestDeterminism:
    """Equal seeds give byte-identical operators"""

    def learned(self, tiny_arch, tiny_match, images, seed: int):
        rng = np.random.default_rng(seed)
        source = PatchSource(images, patch_size=8, stride=4, with_coords=False)
        op_init = build_operator(OperatorConfig(kernel=KernelSpec(kind="dirac", size=5)), rng, learnable=True)
        op, _ = match(VelocityField(tiny_arch, seed=seed), source, op_init, tiny_match, rng)
        return op

    def test_match_repeats(self, tiny_arch, tiny_match, tmp_path):
        """Kernels, noise level and the exported archive repeat exactly"""
        images = [dead_leaves(16, np.random.default_rng(i)) for i in range(2)]
        first = self.learned(tiny_arch, tiny_match, images, seed=11)
        second = self.learned(tiny_arch, tiny_match, images, seed=11)
        assert first.materialize_kernel().data.tobytes() == second.materialize_kernel().data.tobytes()
        assert first.sigma == second.sigma
        assert archive_bytes(first.save(tmp_path / "a")) == archive_bytes(second.save(tmp_path / "b"))

    def test_match_depends_on_seed(self, tiny_arch, tiny_match):
        images = [dead_leaves(16, np.random.default_rng(i)) for i in range(2)]
        first = self.learned(tiny_arch, tiny_match, images, seed=11)
        other = self.learned(tiny_arch, tiny_match, images, seed=12)
        assert any(
            first.state_dict()[name].tobytes() != value.tobytes() for name, value in other.state_dict().items()
        )

    def test_match_sr_repeats(self, tiny_prior, tiny_match, tmp_path):
        """Single-image runs repeat exactly for a fixed seed"""
        image = dead_leaves(32, np.random.default_rng(4))
        cfg = SRConfig(patch_size=4, stride=4, min_patches=4, inner="uniform", kernel_size=5)
        ops = [match_sr(image, cfg, tiny_prior, tiny_match, seed=9)[0] for _ in range(2)]
        assert ops[0].materialize_kernel().data.tobytes() == ops[1].materialize_kernel().data.tobytes()
        assert ops[0].sigma == ops[1].sigma
        assert archive_bytes(ops[0].save(tmp_path / "a")) == archive_bytes(ops[1].save(tmp_path / "b"))
