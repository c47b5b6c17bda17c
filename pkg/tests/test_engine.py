import numpy as np
import pytest

from maskshift import engine
from maskshift.engine import Tensor


def t(data, rg=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


class TestForward:
    def test_sigmoid_at_zero(self):
        assert engine.sigmoid(t(0.0)).item() == pytest.approx(0.5)

    def test_relu_definition(self):
        out = engine.relu(t([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_conv2d_ones_center(self):
        # direct convolution sum: 3x3 window of ones * ones kernel = 9 at center
        x = t(np.ones((1, 1, 3, 3)))
        k = t(np.ones((1, 1, 3, 3)))
        out = engine.conv2d(x, k, pad=1, pad_mode="zero")
        assert out.shape == (1, 1, 3, 3)
        assert out.data[0, 0, 1, 1] == 9.0
        assert out.data[0, 0, 0, 0] == 4.0  # corner sees a 2x2 window

    def test_forward_dispatch(self):
        out = engine.forward("tanh", t([0.0]))
        assert out.data[0] == 0.0
        with pytest.raises(ValueError, match="unknown op"):
            engine.forward("matmul", t([0.0]))

    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ValueError, match=r"add.*\(2,\).*\(3,\)"):
            engine.add(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))

    def test_conv_channel_mismatch(self):
        with pytest.raises(ValueError, match="conv2d"):
            engine.conv2d(t(np.ones((1, 2, 4, 4))), t(np.ones((1, 3, 3, 3))))

    def test_non_finite_rejected(self):
        bad = Tensor(np.zeros(3))
        bad.data[0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            engine.relu(bad)
        with pytest.raises(ValueError, match="non-finite"):
            Tensor(np.array([np.inf]))

    def test_forward_is_pure(self):
        rng = np.random.default_rng(0)
        x = t(rng.uniform(-2, 2, (1, 3, 8, 8)))
        w = t(rng.uniform(-1, 1, (2, 3, 3, 3)))
        a = engine.conv2d(x, w, pad=1).data
        b = engine.conv2d(x, w, pad=1).data
        assert a.tobytes() == b.tobytes()

    def test_instance_norm_statistics(self):
        rng = np.random.default_rng(1)
        x = t(rng.uniform(-2, 2, (1, 4, 16, 16)))
        out = engine.instance_norm(x).data
        for c in range(4):
            assert abs(out[0, c].mean()) <= 1e-5
            assert abs(out[0, c].var() - 1.0) <= 1e-4

    def test_concat_slice_roundtrip(self):
        a = t(np.arange(6.0).reshape(1, 2, 3, 1))
        b = t(np.arange(3.0).reshape(1, 1, 3, 1))
        cat = engine.concat([a, b], axis=1)
        assert cat.shape == (1, 3, 3, 1)
        back = engine.slice_(cat, 1, 0, 2)
        np.testing.assert_array_equal(back.data, a.data)

    def test_nearest_upsample_values(self):
        x = t([[[[1.0, 2.0], [3.0, 4.0]]]])
        up = engine.nearest_upsample(x)
        assert up.shape == (1, 1, 4, 4)
        np.testing.assert_array_equal(up.data[0, 0, :2, :2], [[1, 1], [1, 1]])


class TestBackward:
    def test_mean_grad(self):
        x = t([1.0, 2.0, 3.0, 4.0], rg=True)
        engine.mean(x).backward()
        np.testing.assert_allclose(x.grad, np.full(4, 0.25))

    def test_sigmoid_grad_at_zero(self):
        x = t(0.0, rg=True)
        engine.sigmoid(x).backward()
        assert x.grad == pytest.approx(0.25)

    def test_conv_loss_matches_finite_differences(self):
        from maskshift.gradcheck import compare_grads
        rng = np.random.default_rng(2)
        arrays = [rng.uniform(-1, 1, (1, 2, 5, 5)), rng.uniform(-0.5, 0.5, (1, 2, 3, 3))]
        err = compare_grads(arrays, lambda ts: engine.sum_(
            engine.square(engine.conv2d(ts[0], ts[1], pad=1))))
        assert err <= 1e-4

    def test_backward_requires_scalar(self):
        x = t([1.0, 2.0], rg=True)
        with pytest.raises(ValueError, match="scalar"):
            engine.relu(x).backward()

    def test_backward_accumulates_doubles(self):
        x = t([1.0, -2.0, 3.0], rg=True)
        loss = engine.mean(engine.square(x))
        loss.backward()
        once = x.grad.copy()
        loss.backward()
        np.testing.assert_allclose(x.grad, 2 * once)

    def test_unreached_leaf_has_no_grad(self):
        x = t([1.0], rg=True)
        y = t([2.0], rg=True)
        engine.mean(engine.square(x)).backward()
        assert y.grad is None

    def test_shared_subexpression_fanout(self):
        x = t(3.0, rg=True)
        s = engine.square(x)          # x^2
        loss = engine.add(engine.mul(s, s), s)  # x^4 + x^2
        loss.backward()
        assert x.grad == pytest.approx(4 * 27 + 6)

    def test_detach_blocks_grad(self):
        x = t([1.0, 2.0], rg=True)
        d = engine.square(x).detach()
        engine.mean(d).backward()
        assert x.grad is None
