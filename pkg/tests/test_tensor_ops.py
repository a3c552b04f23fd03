import numpy as np
import pytest

from conftest import max_rel_err, numerical_grad
from recnet.errors import ConfigError, ShapeError
from recnet.tensor import (
    BnState,
    ConvKernel,
    Tensor4,
    avgpool_global,
    avgpool_global_backward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    linear_backward,
    linear_forward,
    maxpool2,
    maxpool2_backward,
    relu,
    relu_backward,
)


class TestContainers:
    def test_tensor4_validates_rank_and_dims(self):
        with pytest.raises(ShapeError):
            Tensor4(np.zeros((2, 3, 4)))
        with pytest.raises(ShapeError):
            Tensor4(np.zeros((2, 0, 4, 4)))
        t = Tensor4(np.zeros((2, 3, 4, 5)))
        assert (t.n, t.c, t.h, t.w) == (2, 3, 4, 5)

    def test_grad_shape_must_match(self):
        with pytest.raises(ShapeError):
            Tensor4(np.zeros((1, 1, 2, 2)), grad=np.zeros((1, 1, 2, 3)))

    def test_grad_accumulation_is_additive(self):
        t = Tensor4(np.zeros((1, 1, 2, 2)))
        t.accumulate(np.ones((1, 1, 2, 2)))
        t.accumulate(np.ones((1, 1, 2, 2)))
        assert np.all(t.grad == 2)

    def test_conv_kernel_props(self):
        k = ConvKernel(np.zeros((4, 3, 3, 3)))
        assert (k.c_out, k.c_in, k.kh, k.kw) == (4, 3, 3, 3)

    def test_bn_state_validation(self):
        with pytest.raises(ConfigError):
            BnState(0)
        with pytest.raises(ConfigError):
            BnState(3, eps=0.0)


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        w = np.array([[[[1.0]]]], dtype=np.float32)
        assert np.array_equal(conv2d_forward(x, w), x)

    def test_all_ones_window_sums(self):
        x = np.ones((1, 1, 3, 3))
        w = np.ones((1, 1, 3, 3))
        y = conv2d_forward(x, w, padding=1)
        assert y[0, 0, 1, 1] == 9.0
        assert y[0, 0, 0, 0] == 4.0
        assert y[0, 0, 0, 2] == 4.0

    def test_stem_shape(self):
        x = np.zeros((2, 3, 32, 32), dtype=np.float32)
        w = np.zeros((80, 3, 3, 3), dtype=np.float32)
        assert conv2d_forward(x, w, padding=1).shape == (2, 80, 32, 32)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))

    def test_even_kernel_same_padding(self):
        with pytest.raises(ConfigError):
            conv2d_forward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)), padding="same")

    def test_linearity(self, f64, rng):
        x = rng.standard_normal((2, 3, 6, 6))
        y = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        a, b = 1.7, -0.4
        lhs = conv2d_forward(a * x + b * y, w, padding="same")
        rhs = a * conv2d_forward(x, w, padding="same") + b * conv2d_forward(y, w, padding="same")
        assert np.max(np.abs(lhs - rhs)) < 1e-6

    @pytest.mark.parametrize("k", [1, 3])
    @pytest.mark.parametrize("size", [4, 7, 12])
    def test_same_padding_preserves_dims(self, k, size):
        x = np.zeros((1, 2, size, size), dtype=np.float32)
        w = np.zeros((3, 2, k, k), dtype=np.float32)
        assert conv2d_forward(x, w, padding="same").shape == (1, 3, size, size)


class TestConv2dBackward:
    def test_identity_kernel_passthrough(self, rng):
        x = rng.standard_normal((1, 1, 4, 4))
        w = np.array([[[[1.0]]]])
        g = rng.standard_normal((1, 1, 4, 4))
        gx, _, _ = conv2d_backward(x, w, g)
        assert np.allclose(gx, g)

    def test_scalar_product_rule(self):
        x = np.full((1, 1, 1, 1), 2.0)
        w = np.full((1, 1, 1, 1), 3.0)
        g = np.ones((1, 1, 1, 1))
        gx, gw, gb = conv2d_backward(x, w, g)
        assert gx.item() == 3.0
        assert gw.item() == 2.0
        assert gb.item() == 1.0

    def test_finite_differences(self, f64, rng):
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        bias = rng.standard_normal(3)
        g = rng.standard_normal((1, 3, 5, 5))

        def loss():
            return float((conv2d_forward(x, w, bias, "same") * g).sum())

        gx, gw, gb = conv2d_backward(x, w, g, "same")
        assert max_rel_err(gx, numerical_grad(loss, x)) < 1e-5
        assert max_rel_err(gw, numerical_grad(loss, w)) < 1e-5
        assert max_rel_err(gb, numerical_grad(loss, bias)) < 1e-5

    def test_grad_shape_check(self):
        with pytest.raises(ShapeError):
            conv2d_backward(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)),
                            np.zeros((1, 1, 4, 4)), padding=0)


class TestBatchNorm:
    def test_train_mode_standardizes(self, f64, rng):
        s = BnState(3, dtype=np.float64)
        x = rng.standard_normal((4, 3, 5, 5)) * 3.0 + 7.0
        y = batchnorm_forward(x, s)
        mean = y.mean(axis=(0, 2, 3))
        var = y.var(axis=(0, 2, 3))
        assert np.all(np.abs(mean) < 1e-6 * (1 + np.abs(x.mean())))
        assert np.all(np.abs(var - 1) < 1e-4)

    def test_constant_channel_absorbed_by_eps(self):
        s = BnState(2, dtype=np.float64)
        s.gamma.data[:] = 2.0
        s.beta.data[:] = 5.0
        x = np.ones((2, 2, 3, 3)) * np.array([4.0, -1.0])[:, None, None]
        y = batchnorm_forward(x, s)
        assert np.allclose(y, 5.0)

    def test_eval_neutral_statistics(self):
        s = BnState(2, dtype=np.float64)
        s.eval()
        x = np.random.default_rng(0).standard_normal((2, 2, 3, 3))
        y = batchnorm_forward(x, s)
        assert np.allclose(y, x / np.sqrt(1 + s.eps))

    def test_single_element_train_is_error(self):
        s = BnState(1)
        with pytest.raises(ConfigError):
            batchnorm_forward(np.ones((1, 1, 1, 1)), s)

    def test_running_stats_update_rule(self, f64, rng):
        s = BnState(2, dtype=np.float64, momentum=0.9)
        x = rng.standard_normal((3, 2, 4, 4)) + 2.0
        batchnorm_forward(x, s)
        expect_mean = 0.9 * 0.0 + 0.1 * x.mean(axis=(0, 2, 3))
        expect_var = 0.9 * 1.0 + 0.1 * x.var(axis=(0, 2, 3))
        assert np.allclose(s.running_mean, expect_mean)
        assert np.allclose(s.running_var, expect_var)

    def test_backward_zero_cotangent(self, f64, rng):
        s = BnState(2, dtype=np.float64)
        x = rng.standard_normal((2, 2, 3, 3))
        gx, gg, gb = batchnorm_backward(x, s, np.zeros_like(x))
        assert not gx.any() and not gg.any() and not gb.any()

    def test_backward_finite_differences(self, f64, rng):
        s = BnState(1, dtype=np.float64)
        s.gamma.data[:] = 1.3
        s.beta.data[:] = -0.2
        x = rng.standard_normal((4, 1, 2, 2))
        g = rng.standard_normal((4, 1, 2, 2))

        def loss():
            return float((batchnorm_forward(x, s, update_running=False) * g).sum())

        gx, gg, gb = batchnorm_backward(x, s, g)
        assert max_rel_err(gx, numerical_grad(loss, x)) < 1e-5
        assert max_rel_err(gg, numerical_grad(loss, s.gamma.data)) < 1e-5
        assert max_rel_err(gb, numerical_grad(loss, s.beta.data)) < 1e-5

    def test_grad_beta_is_sum(self, f64, rng):
        s = BnState(3, dtype=np.float64)
        x = rng.standard_normal((2, 3, 4, 4))
        g = rng.standard_normal((2, 3, 4, 4))
        _, _, gb = batchnorm_backward(x, s, g)
        assert np.allclose(gb, g.sum(axis=(0, 2, 3)))

    def test_eval_backward_affine_path(self, rng):
        s = BnState(2, dtype=np.float64)
        s.gamma.data[:] = [2.0, 0.5]
        s.running_var[:] = [4.0, 1.0]
        s.eval()
        x = rng.standard_normal((2, 2, 3, 3))
        g = rng.standard_normal((2, 2, 3, 3))
        gx, _, _ = batchnorm_backward(x, s, g)
        scale = (s.gamma.data / np.sqrt(s.running_var + s.eps))[:, None, None]
        assert np.allclose(gx, g * scale)


class TestReluAndPooling:
    def test_relu_examples(self):
        x = np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)
        assert np.array_equal(relu(x).ravel(), [0, 0, 2])
        neg = -np.ones((1, 1, 2, 2))
        assert not relu(neg).any()
        assert not relu_backward(neg, np.ones_like(neg)).any()
        pos = np.abs(np.random.default_rng(0).standard_normal((1, 2, 3, 3))) + 0.1
        g = np.ones_like(pos)
        assert np.array_equal(relu(pos), pos)
        assert np.array_equal(relu_backward(pos, g), g)

    def test_maxpool_basic(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        y, idx = maxpool2(x)
        assert y.item() == 4.0
        g = maxpool2_backward(idx, np.ones((1, 1, 1, 1)), (1, 1, 2, 2))
        assert g[0, 0, 1, 1] == 1.0 and g.sum() == 1.0

    def test_maxpool_tie_first_scan_order(self):
        x = np.ones((1, 1, 2, 2))
        y, idx = maxpool2(x)
        assert y.item() == 1.0
        g = maxpool2_backward(idx, np.ones((1, 1, 1, 1)), (1, 1, 2, 2))
        assert g[0, 0, 0, 0] == 1.0 and g.sum() == 1.0

    def test_maxpool_shape(self):
        assert maxpool2(np.zeros((1, 1, 32, 32)))[0].shape == (1, 1, 16, 16)

    def test_maxpool_odd_dims_error(self):
        with pytest.raises(ShapeError):
            maxpool2(np.zeros((1, 1, 5, 4)))

    def test_maxpool_finite_differences(self, f64, rng):
        x = rng.standard_normal((1, 1, 4, 4)) * 2
        g = rng.standard_normal((1, 1, 2, 2))

        def loss():
            return float((maxpool2(x)[0] * g).sum())

        _, idx = maxpool2(x)
        assert max_rel_err(maxpool2_backward(idx, g, x.shape),
                           numerical_grad(loss, x)) < 1e-5

    def test_avgpool_examples(self):
        c = np.full((2, 3, 4, 4), 1.5)
        assert np.allclose(avgpool_global(c), 1.5)
        x = np.array([[0.0, 2.0], [4.0, 6.0]]).reshape(1, 1, 2, 2)
        assert avgpool_global(x).item() == 3.0
        assert avgpool_global(np.zeros((1, 320, 8, 8))).shape == (1, 320, 1, 1)

    def test_avgpool_backward_uniform(self):
        g = np.ones((1, 2, 1, 1))
        gx = avgpool_global_backward(g, (1, 2, 4, 4))
        assert np.allclose(gx, 1.0 / 16)


class TestLinear:
    def test_identity_weights(self, rng):
        x = rng.standard_normal((3, 4))
        b = rng.standard_normal(4)
        y = linear_forward(x, np.eye(4), b)
        assert np.allclose(y, x + b)

    def test_zero_weights_gives_bias_rows(self, rng):
        b = rng.standard_normal(5)
        y = linear_forward(rng.standard_normal((3, 4)), np.zeros((5, 4)), b)
        assert np.allclose(y, np.tile(b, (3, 1)))

    def test_classifier_shape(self):
        y = linear_forward(np.zeros((7, 320)), np.zeros((100, 320)), np.zeros(100))
        assert y.shape == (7, 100)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            linear_forward(np.zeros((2, 5)), np.zeros((3, 4)), np.zeros(3))

    def test_backward_finite_differences(self, f64, rng):
        x = rng.standard_normal((3, 5))
        w = rng.standard_normal((4, 5))
        b = rng.standard_normal(4)
        g = rng.standard_normal((3, 4))

        def loss():
            return float((linear_forward(x, w, b) * g).sum())

        gx, gw, gb = linear_backward(x, w, g)
        assert max_rel_err(gx, numerical_grad(loss, x)) < 1e-5
        assert max_rel_err(gw, numerical_grad(loss, w)) < 1e-5
        assert max_rel_err(gb, numerical_grad(loss, b)) < 1e-5
