import numpy as np
import pytest

from hepatex.ops import (
    GradCheckReport,
    bilinear_resize,
    conv2d_backward,
    conv2d_forward,
    gradcheck,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
)


class TestConv2d:
    def test_identity_scale(self):
        x = np.ones((1, 3, 3))
        k = np.full((1, 1, 1, 1), 2.0)
        out = conv2d_forward(x, k, np.zeros(1))
        assert out.shape == (1, 3, 3)
        np.testing.assert_allclose(out, 2.0)

    def test_impulse_against_hand_cross_correlation(self):
        # independent oracle: literal cross-correlation double loop,
        # out[i,j] = sum_{u,v} x[i+u-1, j+v-1] * k[u,v]
        x = np.zeros((1, 5, 5))
        x[0, 2, 2] = 1.0
        k = np.arange(9, dtype=float).reshape(1, 1, 3, 3)

        expect = np.zeros((5, 5))
        for i in range(5):
            for j in range(5):
                acc = 0.0
                for u in range(3):
                    for v in range(3):
                        ii, jj = i + u - 1, j + v - 1
                        if 0 <= ii < 5 and 0 <= jj < 5:
                            acc += x[0, ii, jj] * k[0, 0, u, v]
                expect[i, j] = acc

        out = conv2d_forward(x, k, np.zeros(1))
        np.testing.assert_allclose(out[0], expect)
        # cross-correlating an impulse shows the kernel mirrored about the center
        np.testing.assert_allclose(out[0, 1:4, 1:4], k[0, 0, ::-1, ::-1])

    def test_stride_two_output_shape(self):
        out = conv2d_forward(np.ones((1, 4, 4)), np.ones((1, 1, 3, 3)), np.zeros(1), stride=2)
        assert out.shape == (1, 2, 2)

    def test_stride_two_odd_input(self):
        out = conv2d_forward(np.ones((1, 5, 5)), np.ones((1, 1, 3, 3)), np.zeros(1), stride=2)
        assert out.shape == (1, 3, 3)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        k = rng.standard_normal((2, 3, 3, 3))
        b = np.zeros(2)
        x = rng.standard_normal((3, 6, 6))
        y = rng.standard_normal((3, 6, 6))
        lhs = conv2d_forward(2.0 * x + 3.0 * y, k, b)
        rhs = 2.0 * conv2d_forward(x, k, b) + 3.0 * conv2d_forward(y, k, b)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-6)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 4, 4\).*\(1, 3, 3, 3\)"):
            conv2d_forward(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)), np.zeros(1))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 2, 5, 5))
        k = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        batched = conv2d_forward(x, k, b, stride=2)
        for i in range(4):
            np.testing.assert_allclose(batched[i], conv2d_forward(x[i], k, b, stride=2))

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradients_match_finite_differences(self, stride):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 5, 5))
        k0 = rng.standard_normal((3, 2, 3, 3))
        b0 = rng.standard_normal(3)
        w = rng.standard_normal(conv2d_forward(x, k0, b0, stride).shape)

        def via_kernels(theta):
            kk = theta.reshape(k0.shape)
            out = conv2d_forward(x, kk, b0, stride)
            _, dk, _ = conv2d_backward(x, kk, stride, w)
            return float((out * w).sum()), dk.reshape(-1)

        def via_input(theta):
            xx = theta.reshape(x.shape)
            out = conv2d_forward(xx, k0, b0, stride)
            dx, _, _ = conv2d_backward(xx, k0, stride, w)
            return float((out * w).sum()), dx.reshape(-1)

        def via_bias(theta):
            out = conv2d_forward(x, k0, theta, stride)
            _, _, db = conv2d_backward(x, k0, stride, w)
            return float((out * w).sum()), db

        for fn, p in [(via_kernels, k0.reshape(-1)), (via_input, x.reshape(-1)), (via_bias, b0)]:
            assert gradcheck(fn, p, h=1e-6).max_rel_error < 1e-6


class TestRelu:
    def test_forward(self):
        np.testing.assert_array_equal(relu_forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_backward_subgradient_zero_at_zero(self):
        up = np.ones(3)
        np.testing.assert_array_equal(
            relu_backward(np.array([-1.0, 0.0, 2.0]), up), [0.0, 0.0, 1.0])

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(50)
        np.testing.assert_array_equal(relu_forward(relu_forward(x)), relu_forward(x))


class TestLinear:
    def test_gradients(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(6)
        w0 = rng.standard_normal((4, 6))
        b0 = rng.standard_normal(4)
        up = rng.standard_normal(4)

        def via_weight(theta):
            ww = theta.reshape(w0.shape)
            out = linear_forward(x, ww, b0)
            _, dw, _ = linear_backward(x, ww, up)
            return float((out * up).sum()), dw.reshape(-1)

        assert gradcheck(via_weight, w0.reshape(-1), h=1e-6).max_rel_error < 1e-7


class TestGradcheck:
    def test_square_function(self):
        def f(theta):
            return float(theta[0] ** 2), 2.0 * theta

        report = gradcheck(f, np.array([3.0]), h=1e-4)
        assert report.max_rel_error < 1e-7
        assert report.num_params == 1

    def test_constant_function(self):
        def f(theta):
            return 1.0, np.zeros_like(theta)

        assert gradcheck(f, np.array([1.0, 2.0]), h=1e-4).max_rel_error == 0.0

    def test_detects_planted_bug(self):
        # analytic gradient deliberately off by 2x -> rel err ~ 0.5
        def f(theta):
            return float(theta[0] ** 2), 4.0 * theta

        report = gradcheck(f, np.array([3.0]), h=1e-4)
        assert abs(report.max_rel_error - 0.5) < 1e-4

    def test_rejects_non_finite_forward(self):
        def f(theta):
            return float("nan"), theta

        with pytest.raises(ValueError, match="finite"):
            gradcheck(f, np.array([1.0]))

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            gradcheck(lambda t: (0.0, t), np.array([1.0]), h=0.0)

    def test_report_ok_threshold(self):
        assert GradCheckReport(1e-5, 1e-5, 3).ok()
        assert not GradCheckReport(0.5, 0.5, 3).ok()


class TestBilinearResize:
    def test_identity(self):
        rng = np.random.default_rng(5)
        img = rng.standard_normal((7, 9))
        np.testing.assert_allclose(bilinear_resize(img, 7, 9), img)

    def test_linear_ramp_preserved(self):
        img = np.tile(np.linspace(0.0, 1.0, 9), (5, 1))
        out = bilinear_resize(img, 5, 5)
        np.testing.assert_allclose(out, np.tile(np.linspace(0.0, 1.0, 5), (5, 1)), atol=1e-12)
