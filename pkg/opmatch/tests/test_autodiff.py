#!/usr/bin/env python3
"""
Tests for the tensor/autodiff engine
====================================

Finite-difference checks of every differentiable primitive, three composed
graphs, optimizers and the OPMT tensor format.
"""

import numpy as np
import pytest

from opmatch.autodiff import (
    SGD,
    Adam,
    PaddingMode,
    Tensor,
    concat,
    conv2d,
    decode_tensor,
    depthwise_conv2d,
    encode_tensor,
    gradcheck,
    interpolate_bilinear,
    linear,
    load_archive,
    load_tensor,
    no_grad,
    pad2d,
    save_archive,
    save_tensor,
    stack,
    warmup_inverse_sqrt,
    where,
)
from opmatch.core.config import ArchConfig
from opmatch.core.errors import ShapeError, TensorFormatError
from opmatch.flow import VelocityField, cfm_loss

TOLERANCE = 1e-5


def leaf(rng, *shape, low=None):
    data = rng.standard_normal(shape)
    if low is not None:
        data = np.abs(data) + low
    return Tensor(data, requires_grad=True, dtype=np.float64)


def projection(rng, shape):
    """Random fixed weights that turn any output into a scalar."""
    return Tensor(rng.standard_normal(shape))


def assert_gradients(fn, inputs):
    errors = gradcheck(fn, inputs)
    assert max(errors.values()) < TOLERANCE, errors


class TestElementwise:
    """Elementwise primitives against central differences"""

    @pytest.mark.parametrize(
        "name", ["square", "exp", "sigmoid", "silu", "softplus", "neg", "pow3"]
    )
    def test_unary_on_reals(self, rng, name):
        """Unary maps defined on the whole real line"""
        x = leaf(rng, 3, 4)
        w = projection(rng, (3, 4))
        ops = {
            "square": lambda t: t.square(),
            "exp": lambda t: t.exp(),
            "sigmoid": lambda t: t.sigmoid(),
            "silu": lambda t: t.silu(),
            "softplus": lambda t: t.softplus(),
            "neg": lambda t: -t,
            "pow3": lambda t: t**3,
        }
        assert_gradients(lambda: (ops[name](x) * w).sum(), [x])

    @pytest.mark.parametrize("name", ["log", "sqrt", "abs", "reciprocal"])
    def test_unary_on_positive(self, rng, name):
        """Maps that need inputs away from zero"""
        x = leaf(rng, 5, low=0.5)
        w = projection(rng, (5,))
        ops = {
            "log": lambda t: t.log(),
            "sqrt": lambda t: t.sqrt(),
            "abs": lambda t: t.abs(),
            "reciprocal": lambda t: 1.0 / t,
        }
        assert_gradients(lambda: (ops[name](x) * w).sum(), [x])

    def test_broadcast_binary(self, rng):
        """Broadcasting add/sub/mul/div reduce gradients to operand shapes"""
        a = leaf(rng, 2, 3, 4)
        b = leaf(rng, 3, 1, low=0.5)
        w = projection(rng, (2, 3, 4))
        assert_gradients(lambda: (((a + b) * a - b) / b * w).sum(), [a, b])

    def test_matmul(self, rng):
        """Matrix product in both operands"""
        a = leaf(rng, 3, 4)
        b = leaf(rng, 4, 2)
        w = projection(rng, (3, 2))
        assert_gradients(lambda: ((a @ b) * w).sum(), [a, b])

    def test_where(self, rng):
        """Masked selection routes the gradient to one branch"""
        a = leaf(rng, 4, 4)
        b = leaf(rng, 4, 4)
        mask = rng.random((4, 4)) > 0.5
        w = projection(rng, (4, 4))
        assert_gradients(lambda: (where(mask, a, b) * w).sum(), [a, b])


class TestReductionsAndShapes:
    """Reductions, reshapes and indexing"""

    def test_sum_mean_axes(self, rng):
        """Sum and mean over single and multiple axes"""
        x = leaf(rng, 2, 3, 4)
        w = projection(rng, (2,))
        assert_gradients(lambda: (x.sum(axis=(1, 2)) * w).sum() + x.mean(axis=1).square().mean(), [x])

    def test_reshape_transpose_flip(self, rng):
        """Pure data movement keeps gradients exact"""
        x = leaf(rng, 2, 3, 4)
        w = projection(rng, (4, 6))
        assert_gradients(lambda: (x.transpose(2, 0, 1).flip((0,)).reshape(4, 6) * w).sum(), [x])

    def test_getitem(self, rng):
        """Slicing scatters the gradient back"""
        x = leaf(rng, 2, 2, 5, 5)
        w = projection(rng, (2, 2, 3, 4))
        assert_gradients(lambda: (x[:, :, 1:4, :-1] * w).sum(), [x])

    def test_concat_and_stack(self, rng):
        """Concatenation splits gradients per input"""
        a = leaf(rng, 2, 3)
        b = leaf(rng, 1, 3)
        w = projection(rng, (2, 3, 3))
        assert_gradients(lambda: (stack([concat([a, b], 0)] * 2, 0) * w).sum(), [a, b])


class TestSpatialPrimitives:
    """Padding, convolutions, linear maps and resizing"""

    @pytest.mark.parametrize("mode", ["zero", "replicate", "circular"])
    def test_pad2d(self, rng, mode):
        """Every padding mode"""
        x = leaf(rng, 1, 2, 4, 5)
        w = projection(rng, (1, 2, 7, 8))
        assert_gradients(lambda: (pad2d(x, (1, 2, 2, 1), mode) * w).sum(), [x])

    @pytest.mark.parametrize("mode", ["zero", "replicate", "circular", "valid"])
    def test_conv2d(self, rng, mode):
        """Multi-channel correlation in input, kernel and bias"""
        x = leaf(rng, 2, 2, 6, 6)
        k = leaf(rng, 3, 2, 3, 3)
        bias = leaf(rng, 3)
        size = 6 if mode != "valid" else 4
        w = projection(rng, (2, 3, size, size))
        assert_gradients(lambda: (conv2d(x, k, mode, bias) * w).sum(), [x, k, bias])

    def test_depthwise_shared_kernel(self, rng):
        """One kernel per channel shared by the batch"""
        x = leaf(rng, 2, 3, 6, 6)
        k = leaf(rng, 3, 3, 3)
        w = projection(rng, (2, 3, 6, 6))
        assert_gradients(lambda: (depthwise_conv2d(x, k, "replicate") * w).sum(), [x, k])

    def test_depthwise_per_sample_kernel(self, rng):
        """One kernel set per sample"""
        x = leaf(rng, 2, 1, 5, 5)
        k = leaf(rng, 2, 1, 3, 3)
        w = projection(rng, (2, 1, 5, 5))
        assert_gradients(lambda: (depthwise_conv2d(x, k, "zero") * w).sum(), [x, k])

    def test_linear(self, rng):
        """Affine map in input, weight and bias"""
        x = leaf(rng, 4, 3)
        weight = leaf(rng, 2, 3)
        bias = leaf(rng, 2)
        w = projection(rng, (4, 2))
        assert_gradients(lambda: (linear(x, weight, bias) * w).sum(), [x, weight, bias])

    def test_interpolate_bilinear(self, rng):
        """Bilinear resizing up and down"""
        x = leaf(rng, 1, 1, 4, 6)
        w = projection(rng, (1, 1, 7, 3))
        assert_gradients(lambda: (interpolate_bilinear(x, (7, 3)) * w).sum(), [x])

    def test_conv2d_is_correlation(self):
        """A shifted dirac kernel moves content the correlation way"""
        x = Tensor(np.arange(25, dtype=np.float64).reshape(1, 1, 5, 5))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 2] = 1.0
        out = conv2d(x, Tensor(k), PaddingMode.ZERO).data[0, 0]
        np.testing.assert_allclose(out[:, :-1], x.data[0, 0, :, 1:])

    def test_channel_mismatch_names_dimension(self, rng):
        """Shape errors name the C dimension"""
        with pytest.raises(ShapeError, match="channel dimension C"):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


class TestComposedGraphs:
    """Gradients through multi-stage graphs"""

    def test_blur_then_tv(self, rng):
        """Blur, replicate padding and a smoothed TV term"""
        x = leaf(rng, 1, 1, 6, 6)
        k = leaf(rng, 1, 3, 3, low=0.1)

        def fn():
            kernel = k.abs() / k.abs().sum()
            y = depthwise_conv2d(x, kernel, "replicate")
            xp = pad2d(y, (0, 1, 0, 1), "replicate")
            dx = xp[:, :, :-1, 1:] - xp[:, :, :-1, :-1]
            dy = xp[:, :, 1:, :-1] - xp[:, :, :-1, :-1]
            return (dx.square() + dy.square() + 1e-3).sqrt().sum()

        assert_gradients(fn, [x, k])

    def test_velocity_cfm_loss(self, rng):
        """CFM loss of a small velocity network w.r.t. weights and data"""
        model = VelocityField(ArchConfig(hidden=4, depth=3, time_embed_dim=4), seed=3)
        z1 = leaf(rng, 2, 1, 4, 4)
        z0 = rng.standard_normal((2, 1, 4, 4))
        t = np.array([0.3, 0.7])
        params = [model.params["conv_in.weight"], model.params["time0.weight"]]
        assert_gradients(lambda: cfm_loss(model, z1, z0=z0, t=t), params + [z1])

    def test_shared_subgraph(self, rng):
        """A node reused by several consumers accumulates its gradient"""
        x = leaf(rng, 3, 3)
        w = projection(rng, (3, 3))

        def fn():
            h = (x @ x).sigmoid()
            return (h * h * w).sum() + (h @ x).mean()

        assert_gradients(fn, [x])


class TestTape:
    """Graph recording rules"""

    def test_no_grad_records_nothing(self, rng):
        """Inside no_grad outputs are detached"""
        x = leaf(rng, 3)
        with no_grad():
            y = (x * 2.0).sum()
        assert not y.requires_grad

    def test_backward_needs_scalar(self, rng):
        """Non-scalar losses are rejected"""
        x = leaf(rng, 3)
        with pytest.raises(ShapeError):
            (x * 2.0).backward()

    def test_broadcast_mismatch(self):
        """Incompatible shapes raise ShapeError"""
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))

    def test_gradients_accumulate(self, rng):
        """Two backward passes add into the same leaf"""
        x = leaf(rng, 2)
        (x.sum() * 3.0).backward()
        (x.sum() * 3.0).backward()
        np.testing.assert_allclose(x.grad, [6.0, 6.0])


class TestOptimizers:
    """Adam, SGD and schedules"""

    def test_adam_minimises_quadratic(self):
        """Adam drives a quadratic to its minimum"""
        x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        opt = Adam([x], lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            ((x - 1.0).square().sum()).backward()
            opt.step()
        np.testing.assert_allclose(x.data, [1.0, 1.0], atol=1e-3)

    def test_sgd_step(self):
        """One SGD step moves against the gradient"""
        x = Tensor(np.array([1.0]), requires_grad=True)
        opt = SGD([x], lr=0.25)
        (x.square().sum()).backward()
        opt.step()
        assert x.data[0] == pytest.approx(0.5)

    def test_warmup_inverse_sqrt(self):
        """Linear warmup then inverse square-root decay"""
        schedule = warmup_inverse_sqrt(4)
        assert schedule(1) == pytest.approx(0.25)
        assert schedule(4) == pytest.approx(1.0)
        assert schedule(16) == pytest.approx(0.5)

    def test_rejects_non_positive_lr(self):
        """Learning rates must be positive"""
        with pytest.raises(ValueError):
            SGD([Tensor([1.0], requires_grad=True)], lr=0.0)


class TestSerialization:
    """OPMT tensors and archives"""

    def test_tensor_file(self, tmp_path, rng):
        """Shape and float64 values survive a file"""
        value = rng.standard_normal((2, 3, 4))
        path = save_tensor(tmp_path / "x.opmt", value)
        loaded = load_tensor(path)
        assert loaded.shape == (2, 3, 4)
        np.testing.assert_array_equal(loaded, value)

    def test_header_layout(self):
        """Magic, little-endian rank and dims precede the payload"""
        buf = encode_tensor(np.zeros((2, 5)))
        assert buf[:4] == b"OPMT"
        assert int.from_bytes(buf[4:8], "little") == 2
        assert len(buf) == 8 + 2 * 4 + 10 * 8

    def test_scalar(self):
        """Rank-0 tensors are supported"""
        assert float(decode_tensor(encode_tensor(np.asarray(2.5)))) == pytest.approx(2.5)

    def test_bad_magic(self):
        """Foreign bytes raise TensorFormatError"""
        with pytest.raises(TensorFormatError):
            decode_tensor(b"NOPE\x00\x00\x00\x00")

    def test_truncated_payload(self):
        """A short payload is detected"""
        with pytest.raises(TensorFormatError):
            decode_tensor(encode_tensor(np.zeros(4))[:-3])

    def test_archive(self, tmp_path, rng):
        """Named tensors plus a JSON descriptor"""
        tensors = {"a": rng.standard_normal(3), "b": rng.standard_normal((2, 2))}
        save_archive(tmp_path / "arch", tensors, {"kind": "demo"})
        loaded, descriptor = load_archive(tmp_path / "arch")
        assert descriptor == {"kind": "demo"}
        assert sorted(loaded) == ["a", "b"]
        np.testing.assert_array_equal(loaded["b"], tensors["b"])
