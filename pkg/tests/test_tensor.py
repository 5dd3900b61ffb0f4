"""Autodiff core: forward oracles, gradient audits, structural properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperslim.tensor import (
    ConvWeights,
    ShapeError,
    Tensor,
    absval,
    add,
    channel_mix,
    conv2d,
    deconv2d,
    leaky_relu,
    mul_scalar,
    pixel_shuffle,
    pixel_shuffle_raw,
    pixel_unshuffle_raw,
    round_half_away,
    square,
    sub,
    tmean,
    tsum,
)
from hyperslim.optim import SGD, Adam, MissingGradError, optimizer_step

from oracles import (
    central_diff,
    channel_mix_loops,
    conv2d_loops,
    deconv2d_scatter,
    grad_close,
    pixel_shuffle_loops,
    pixel_unshuffle_loops,
    rel_err,
)


def make_conv(w, b, stride=1, padding=0):
    return ConvWeights(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True),
                       "conv", stride, padding)


def make_deconv(w, b, stride=1, padding=0):
    return ConvWeights(Tensor(w, requires_grad=True), Tensor(b, requires_grad=True),
                       "deconv", stride, padding)


class TestConvForward:
    def test_scalar_case(self):
        out = conv2d(Tensor([[[[3.0]]]]), make_conv(np.full((1, 1, 1, 1), 2.0), [0.5]))
        assert out.data.item() == pytest.approx(2.0 * 3.0 + 0.5)

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 5, 5))
        w = np.eye(3).reshape(3, 3, 1, 1)
        out = conv2d(Tensor(x), make_conv(w, np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = conv2d(Tensor(x), make_conv(w, b, stride=2, padding=1))
        ref = conv2d_loops(x, w, b, 2, 1)
        assert out.data.shape == (1, 4, 4, 4)
        np.testing.assert_allclose(out.data, ref, rtol=1e-12, atol=1e-12)

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        with pytest.raises(ShapeError, match="channels"):
            conv2d(x, make_conv(np.zeros((4, 3, 3, 3)), np.zeros(4)))

    def test_output_shape_formula(self):
        x = Tensor(np.zeros((2, 3, 13, 9)))
        out = conv2d(x, make_conv(np.zeros((5, 3, 5, 5)), np.zeros(5), stride=2, padding=2))
        assert out.data.shape == (2, 5, (13 + 4 - 5) // 2 + 1, (9 + 4 - 5) // 2 + 1)


class TestDeconvForward:
    def test_identity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 3, 4, 4))
        w = np.eye(3).reshape(3, 3, 1, 1)
        out = deconv2d(Tensor(x), make_deconv(w, np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_matches_scatter_reference(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 1, 2, 2))
        w = rng.normal(size=(1, 1, 2, 2))
        out = deconv2d(Tensor(x), make_deconv(w, np.zeros(1), stride=2))
        ref = deconv2d_scatter(x, w, np.zeros(1), 2, 0)
        assert out.data.shape == (1, 1, 4, 4)
        np.testing.assert_allclose(out.data, ref, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("stride,padding,ks", [(1, 0, 3), (2, 1, 4), (2, 0, 5), (1, 1, 3)])
    def test_random_against_reference(self, stride, padding, ks):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 3, 4, 4))
        w = rng.normal(size=(3, 2, ks, ks))
        b = rng.normal(size=2)
        out = deconv2d(Tensor(x), make_deconv(w, b, stride, padding))
        ref = deconv2d_scatter(x, w, b, stride, padding)
        np.testing.assert_allclose(out.data, ref, rtol=1e-12, atol=1e-12)

    def test_pure_channel_mix_when_ks1(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 3, 4, 4))
        w = rng.normal(size=(3, 2, 1, 1))
        out = deconv2d(Tensor(x), make_deconv(w, np.zeros(2)))
        ref = channel_mix_loops(x, w[:, :, 0, 0].T)
        np.testing.assert_allclose(out.data, ref, rtol=1e-12, atol=1e-14)


class TestPixelShuffle:
    def test_two_by_two_grid(self):
        x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
        out = pixel_shuffle(x, 2)
        np.testing.assert_array_equal(out.data, [[[[1.0, 2.0], [3.0, 4.0]]]])

    def test_alpha_one_identity(self):
        x = np.random.default_rng(6).normal(size=(2, 3, 4, 4))
        np.testing.assert_array_equal(pixel_shuffle(Tensor(x), 1).data, x)

    def test_round_trip_exact(self):
        x = np.random.default_rng(7).normal(size=(2, 8, 3, 3))
        shuffled = pixel_shuffle_raw(x, 2)
        np.testing.assert_array_equal(pixel_unshuffle_raw(shuffled, 2), x)

    def test_matches_loop_reference(self):
        x = np.random.default_rng(8).normal(size=(2, 18, 3, 4))
        np.testing.assert_array_equal(pixel_shuffle_raw(x, 3), pixel_shuffle_loops(x, 3))
        np.testing.assert_array_equal(pixel_unshuffle_raw(pixel_shuffle_raw(x, 3), 3),
                                      x)

    def test_indivisible_channels_raise(self):
        with pytest.raises(ShapeError, match="divisible"):
            pixel_shuffle(Tensor(np.zeros((1, 3, 2, 2))), 2)

    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4))
    @settings(max_examples=25, deadline=None)
    def test_bijective_for_any_size(self, alpha, c, h):
        x = np.arange(c * alpha * alpha * h * h, dtype=np.float64).reshape(1, c * alpha * alpha, h, h)
        out = pixel_shuffle_raw(x, alpha)
        np.testing.assert_array_equal(pixel_unshuffle_raw(out, alpha), x)
        assert sorted(out.reshape(-1)) == sorted(x.reshape(-1))


class TestActivation:
    def test_values(self):
        x = Tensor(np.array([2.0, -1.0, 0.0]))
        out = leaky_relu(x)
        np.testing.assert_allclose(out.data, [2.0, -0.01, 0.0])

    def test_gradient_matches_finite_diff(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 3, 4, 4)) + 0.3  # keep away from the kink

        def loss(arr):
            return leaky_relu(Tensor(arr), 0.01).data.sum()

        xt = Tensor(x, requires_grad=True)
        tsum(leaky_relu(xt, 0.01)).backward()
        numeric = central_diff(loss, x.copy())
        assert grad_close(xt.grad, numeric, 1e-6)


class TestGradientAudit:
    """Analytic gradients vs central finite differences (step 1e-5, rel 1e-4)."""

    def _check(self, build, arrays, rtol=1e-4):
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        build(*tensors).backward()
        for i, (t, a) in enumerate(zip(tensors, arrays)):
            def loss(arr, i=i):
                args = [Tensor(x) for x in arrays]
                args[i] = Tensor(arr)
                return float(build(*args).data)
            numeric = central_diff(loss, a.copy())
            assert grad_close(t.grad, numeric, rtol), f"arg {i} gradient mismatch"

    def test_conv2d_grads(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(1, 2, 6, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)

        def build(xt, wt, bt):
            return tsum(square(conv2d(xt, ConvWeights(wt, bt, "conv", 2, 1))))

        self._check(build, [x, w, b])

    def test_deconv2d_grads(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(1, 2, 3, 3))
        w = rng.normal(size=(2, 3, 4, 4))
        b = rng.normal(size=3)

        def build(xt, wt, bt):
            return tsum(square(deconv2d(xt, ConvWeights(wt, bt, "deconv", 2, 1))))

        self._check(build, [x, w, b])

    def test_deconv_weight_grad_sum_loss(self):
        # gradient of the plain output sum w.r.t. every weight entry
        rng = np.random.default_rng(12)
        x = rng.normal(size=(1, 2, 3, 3))
        w = rng.normal(size=(2, 2, 3, 3))
        b = np.zeros(2)

        def build(xt, wt, bt):
            return tsum(deconv2d(xt, ConvWeights(wt, bt, "deconv", 2, 0)))

        self._check(build, [x, w, b])

    def test_pixelshuffle_path_grads(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(8, 2, 3, 3))
        b = rng.normal(size=8)

        def build(xt, wt, bt):
            return tsum(square(pixel_shuffle(conv2d(xt, ConvWeights(wt, bt, "conv", 1, 1)), 2)))

        self._check(build, [x, w, b])

    def test_channel_mix_grads(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(2, 3, 4, 4))
        r = rng.normal(size=(2, 3))

        def build(xt, rt):
            return tsum(square(channel_mix(xt, rt)))

        self._check(build, [x, r])

    def test_composite_ops_grads(self):
        rng = np.random.default_rng(15)
        a = rng.normal(size=(2, 2, 3, 3))
        b = rng.normal(size=(2, 2, 3, 3))

        def build(at, bt):
            return tmean(square(sub(absval(at), mul_scalar(bt, 0.7))))

        self._check(build, [a, b])


class TestLinearity:
    def test_conv_linear_in_input(self):
        rng = np.random.default_rng(16)
        w = make_conv(rng.normal(size=(3, 2, 3, 3)), np.zeros(3), 1, 1)
        x1 = rng.normal(size=(1, 2, 6, 6))
        x2 = rng.normal(size=(1, 2, 6, 6))
        a, b = 0.7, -1.3
        lhs = conv2d(Tensor(a * x1 + b * x2), w).data
        rhs = a * conv2d(Tensor(x1), w).data + b * conv2d(Tensor(x2), w).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_deconv_linear_in_weight(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(1, 2, 4, 4))
        w1 = rng.normal(size=(2, 3, 4, 4))
        w2 = rng.normal(size=(2, 3, 4, 4))
        a, b = 0.25, 2.0
        zero = np.zeros(3)
        lhs = deconv2d(Tensor(x), make_deconv(a * w1 + b * w2, zero, 2, 1)).data
        rhs = (a * deconv2d(Tensor(x), make_deconv(w1, zero, 2, 1)).data
               + b * deconv2d(Tensor(x), make_deconv(w2, zero, 2, 1)).data)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_determinism(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(2, 3, 8, 8))
        w = make_conv(rng.normal(size=(4, 3, 5, 5)), rng.normal(size=4), 2, 2)
        a = conv2d(Tensor(x), w).data
        b = conv2d(Tensor(x), w).data
        assert np.array_equal(a, b)


class TestOptimizers:
    def test_sgd_single_step(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([0.5])
        optimizer_step([p], lr=0.1, kind="sgd")
        assert p.data[0] == pytest.approx(0.95)

    def test_zero_gradient_no_change(self):
        p = Tensor(np.array([3.0]), requires_grad=True)
        p.grad = np.zeros(1)
        optimizer_step([p], lr=0.1, kind="sgd")
        assert p.data[0] == 3.0

    def test_adam_first_step_hand_recursion(self):
        # m1 = 0.1*g, v1 = 0.001*g^2; with bias correction the ratio is
        # g / (|g| + eps') so the first step is ~lr for g=1
        p = Tensor(np.array([2.0]), requires_grad=True)
        p.grad = np.array([1.0])
        opt = Adam([p], lr=0.1)
        opt.step()
        m = 0.1 * 1.0 / (1 - 0.9)
        v = 0.001 * 1.0 / (1 - 0.999)
        expected = 2.0 - 0.1 * m / (np.sqrt(v) + 1e-8)
        assert p.data[0] == pytest.approx(expected, rel=1e-12)
        assert p.data[0] == pytest.approx(1.9, abs=1e-6)

    def test_missing_grad_raises(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(MissingGradError):
            SGD([p], 0.1).step()

    def test_adam_state_persists(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam([p], lr=0.01)
        for _ in range(5):
            p.grad = np.array([1.0])
            opt.step()
        assert opt.t == 5
        assert p.data[0] < -0.04


class TestRounding:
    @pytest.mark.parametrize("x,expected", [(0.4, 0.0), (-1.5, -2.0), (1.5, 2.0),
                                            (2.0, 2.0), (-0.5, -1.0), (0.5, 1.0)])
    def test_half_away_from_zero(self, x, expected):
        assert round_half_away(np.array([x]))[0] == expected

    def test_integers_fixed(self):
        v = np.arange(-5.0, 6.0)
        np.testing.assert_array_equal(round_half_away(v), v)


class TestGraphMechanics:
    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        y = add(x, x)
        tsum(y).backward()
        np.testing.assert_array_equal(x.grad, 2 * np.ones((1, 1, 2, 2)))

    def test_no_grad_branches_skipped(self):
        x = Tensor(np.ones((1, 2, 4, 4)))
        w = make_conv(np.random.default_rng(19).normal(size=(2, 2, 3, 3)), np.zeros(2), 1, 1)
        w.weight.requires_grad = False
        w.bias.requires_grad = False
        out = conv2d(x, w)
        assert not out.requires_grad

    def test_frozen_weight_gets_no_grad(self):
        x = Tensor(np.ones((1, 2, 4, 4)), requires_grad=True)
        w = make_conv(np.random.default_rng(20).normal(size=(2, 2, 3, 3)), np.zeros(2), 1, 1)
        w.weight.requires_grad = False
        w.bias.requires_grad = False
        tsum(conv2d(x, w)).backward()
        assert w.weight.grad is None
        assert x.grad is not None
