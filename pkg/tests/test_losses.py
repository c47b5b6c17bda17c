import numpy as np
import pytest

from maskshift import engine, losses
from maskshift.engine import Tensor
from maskshift.losses import LossWeights


def t(data):
    return Tensor(np.asarray(data, dtype=np.float64))


def full(shape, v):
    return t(np.full(shape, v))


SHAPE = (1, 1, 4, 4)


class TestGanLosses:
    def test_d_exact_targets(self):
        assert losses.loss_gan_d(full(SHAPE, 1.0), full(SHAPE, 0.0)).item() == 0.0

    def test_d_worst_case(self):
        assert losses.loss_gan_d(full(SHAPE, 0.0), full(SHAPE, 1.0)).item() == pytest.approx(2.0)

    def test_d_matches_elementwise_oracle(self):
        rng = np.random.default_rng(0)
        r, f = rng.normal(size=SHAPE), rng.normal(size=SHAPE)
        expect = ((r - 1) ** 2).mean() + (f ** 2).mean()
        assert losses.loss_gan_d(t(r), t(f)).item() == pytest.approx(expect)

    def test_d_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            losses.loss_gan_d(t(np.zeros((0,))), full(SHAPE, 0.0))

    def test_g_exact_target(self):
        assert losses.loss_gan_g(full(SHAPE, 1.0)).item() == 0.0
        assert losses.loss_gan_g(full(SHAPE, 0.0)).item() == pytest.approx(1.0)

    def test_g_matches_oracle(self):
        rng = np.random.default_rng(1)
        f = rng.normal(size=SHAPE)
        assert losses.loss_gan_g(t(f)).item() == pytest.approx(((f - 1) ** 2).mean())


class TestCycleLosses:
    def test_perfect_reconstruction(self):
        x, y = full(SHAPE, 0.3), full(SHAPE, -0.2)
        assert losses.loss_cycle(x, x, y, y).item() == 0.0

    def test_uniform_offset(self):
        x = full(SHAPE, 0.0)
        assert losses.loss_cycle(x, full(SHAPE, 0.1), x, x).item() == pytest.approx(0.1)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        a, b, c, d = (rng.normal(size=SHAPE) for _ in range(4))
        expect = np.abs(b - a).mean() + np.abs(d - c).mean()
        assert losses.loss_cycle(t(a), t(b), t(c), t(d)).item() == pytest.approx(expect)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            losses.loss_cycle(full(SHAPE, 0.0), full((1, 1, 3, 3), 0.0),
                              full(SHAPE, 0.0), full(SHAPE, 0.0))

    def test_symmetric_under_pair_swap(self):
        rng = np.random.default_rng(3)
        a, b, c, d = (rng.normal(size=SHAPE) for _ in range(4))
        assert losses.loss_cycle(t(a), t(b), t(c), t(d)).item() == pytest.approx(
            losses.loss_cycle(t(c), t(d), t(a), t(b)).item())


class TestAttentionLosses:
    def test_cycle_identical_maps(self):
        a = full(SHAPE, 0.4)
        assert losses.loss_attn_cycle(a, a, a, a).item() == 0.0

    def test_cycle_uniform_difference(self):
        a, b = full(SHAPE, 0.5), full(SHAPE, 0.7)
        assert losses.loss_attn_cycle(a, b, a, a).item() == pytest.approx(0.2)

    def test_cycle_matches_oracle_and_symmetry(self):
        rng = np.random.default_rng(4)
        m = [rng.uniform(0, 1, SHAPE) for _ in range(4)]
        expect = np.abs(m[0] - m[1]).mean() + np.abs(m[2] - m[3]).mean()
        got = losses.loss_attn_cycle(*map(t, m)).item()
        assert got == pytest.approx(expect)
        swapped = losses.loss_attn_cycle(t(m[2]), t(m[3]), t(m[0]), t(m[1])).item()
        assert got == pytest.approx(swapped)

    def test_sparse_values(self):
        assert losses.loss_attn_sparse(full(SHAPE, 0.0), full(SHAPE, 0.0)).item() == 0.0
        assert losses.loss_attn_sparse(full(SHAPE, 1.0), full(SHAPE, 1.0)).item() == pytest.approx(2.0)
        half = np.zeros(SHAPE)
        half.reshape(-1)[:8] = 1.0
        assert losses.loss_attn_sparse(t(half), full(SHAPE, 0.0)).item() == pytest.approx(0.5)

    def test_supervised_exact_fit(self):
        m = t((np.arange(16).reshape(SHAPE) % 2).astype(float))
        assert losses.loss_attn_supervised([m], [m], [m], [m]).item() == 0.0

    def test_supervised_half_prediction(self):
        m = t((np.arange(16).reshape(SHAPE) % 2).astype(float))
        p = full(SHAPE, 0.5)
        assert losses.loss_attn_supervised([p], [m], [p], [m]).item() == pytest.approx(1.0)

    def test_supervised_matches_oracle(self):
        rng = np.random.default_rng(5)
        p1, p2 = rng.uniform(0, 1, SHAPE), rng.uniform(0, 1, SHAPE)
        m1 = (rng.uniform(0, 1, SHAPE) > 0.5).astype(float)
        m2 = (rng.uniform(0, 1, SHAPE) > 0.5).astype(float)
        expect = np.abs(p1 - m1).mean() + np.abs(p2 - m2).mean()
        got = losses.loss_attn_supervised([t(p1)], [t(m1)], [t(p2)], [t(m2)]).item()
        assert got == pytest.approx(expect)

    def test_supervised_rejects_non_binary_mask(self):
        with pytest.raises(ValueError, match="binary"):
            losses.loss_attn_supervised([full(SHAPE, 0.5)], [full(SHAPE, 0.3)],
                                        [full(SHAPE, 0.5)], [full(SHAPE, 1.0)])


class TestTotals:
    def components(self, v=1.0):
        return {k: full((), v) for k in ("gan_g_xy", "gan_g_yx", "cyc", "a_cyc", "a_sparse")}

    def test_all_zero(self):
        total = losses.total_generator_loss("unsupervised", LossWeights(), self.components(0.0))
        assert total.item() == 0.0

    def test_weighted_sum(self):
        w = LossWeights(lambda_cyc=10, lambda_a_cyc=1, lambda_a_sparse=1)
        total = losses.total_generator_loss("unsupervised", w, self.components(1.0))
        assert total.item() == pytest.approx(14.0)

    def test_supervised_rejects_sparse_component(self):
        comps = {k: full((), 1.0) for k in ("gan_g_xy", "gan_g_yx", "cyc", "a_sup", "a_sparse")}
        with pytest.raises(ValueError, match="unexpected"):
            losses.total_generator_loss("supervised", LossWeights(), comps)

    def test_missing_component_rejected(self):
        comps = self.components()
        del comps["cyc"]
        with pytest.raises(ValueError, match="missing"):
            losses.total_generator_loss("unsupervised", LossWeights(), comps)

    def test_weight_scaling_scales_only_that_term(self):
        comps = self.components(1.0)
        base = losses.total_generator_loss(
            "unsupervised", LossWeights(10, 1, 1), comps).item()
        scaled = losses.total_generator_loss(
            "unsupervised", LossWeights(10, 1, 3), comps).item()
        assert scaled - base == pytest.approx(2.0)  # only the sparse term tripled

    def test_report_decomposition(self):
        w = LossWeights(10, 1, 1)
        comps = self.components(1.0)
        rep = losses.make_report("unsupervised", w, comps, gan_d_x=0.5, gan_d_y=0.25)
        assert rep.total_g == pytest.approx(
            rep.gan_g_xy + rep.gan_g_yx + 10 * rep.cyc + rep.a_cyc + rep.a_sparse)
        assert rep.total_d == pytest.approx(0.75)

    def test_weights_validation(self):
        with pytest.raises(ValueError, match="lambda_cyc"):
            LossWeights(lambda_cyc=-1)
        w = LossWeights(10, 2, 3, 4).for_supervised()
        assert w.lambda_a_cyc == 0 and w.lambda_a_sparse == 0
