"""Loss terms for the layered translation objective.

All L1 terms are per-element means rather than raw sums, so the weight
defaults stay meaningful at any image resolution.  Least-squares adversarial
targets: discriminators push real score maps to 1 and fake ones to 0, the
generator side pushes fake scores to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import engine
from .engine import Tensor

BINARY_MASK_TOL = 1e-6

GENERATOR_COMPONENTS = {
    "unsupervised": ("gan_g_xy", "gan_g_yx", "cyc", "a_cyc", "a_sparse"),
    "supervised": ("gan_g_xy", "gan_g_yx", "cyc", "a_sup"),
}

REPORT_COLUMNS = ("gan_g_xy", "gan_g_yx", "gan_d_x", "gan_d_y",
                  "cyc", "a_cyc", "a_sparse", "a_sup", "total_g", "total_d")


@dataclass
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_a_cyc: float = 1.0
    lambda_a_sparse: float = 1.0   # "lambda_attn" in ablation configs
    lambda_a_sup: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError("%s must be a nonnegative real, got %r" % (f.name, v))

    def for_supervised(self):
        """Supervised mode drops the attention-cycle and sparse terms."""
        return LossWeights(self.lambda_cyc, 0.0, 0.0, self.lambda_a_sup)


@dataclass
class LossReport:
    gan_g_xy: float = 0.0
    gan_g_yx: float = 0.0
    gan_d_x: float = 0.0
    gan_d_y: float = 0.0
    cyc: float = 0.0
    a_cyc: float = 0.0
    a_sparse: float = 0.0
    a_sup: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    def row(self):
        return [getattr(self, c) for c in REPORT_COLUMNS]


def _mae(a, b):
    return engine.mean(engine.abs_(engine.sub(a, b)))


def loss_gan_d(real_scores, fake_scores):
    """Least-squares discriminator loss: mean (real-1)^2 + mean fake^2."""
    if real_scores.data.size == 0 or fake_scores.data.size == 0:
        raise ValueError("loss_gan_d: empty score map")
    return engine.add(engine.mean(engine.square(real_scores - 1.0)),
                      engine.mean(engine.square(fake_scores)))


def loss_gan_g(fake_scores):
    """Least-squares generator loss: mean (fake-1)^2."""
    if fake_scores.data.size == 0:
        raise ValueError("loss_gan_g: empty score map")
    return engine.mean(engine.square(fake_scores - 1.0))


def loss_cycle(x, f_of_g_x, y, g_of_f_y):
    return engine.add(_mae(f_of_g_x, x), _mae(g_of_f_y, y))


def loss_attn_cycle(a_x_of_x, a_y_of_gx, a_y_of_y, a_x_of_fy):
    return engine.add(_mae(a_x_of_x, a_y_of_gx), _mae(a_y_of_y, a_x_of_fy))


def loss_attn_sparse(a_x_of_x, a_y_of_y):
    # reads only the attention maps of real images, never the cross maps
    return engine.add(engine.mean(engine.abs_(a_x_of_x)),
                      engine.mean(engine.abs_(a_y_of_y)))


def _check_binary(mask):
    d = mask.data
    if not np.all((np.abs(d) <= BINARY_MASK_TOL) | (np.abs(d - 1.0) <= BINARY_MASK_TOL)):
        raise ValueError("mask values must be binary {0,1}")


def loss_attn_supervised(pred_x, masks_x, pred_y, masks_y):
    """Per-sample MAE against binary masks, batch-averaged, summed over domains."""
    if len(pred_x) != len(masks_x) or len(pred_y) != len(masks_y):
        raise ValueError("prediction/mask counts differ")
    if not pred_x or not pred_y:
        raise ValueError("loss_attn_supervised: empty batch")
    terms = []
    for preds, masks in ((pred_x, masks_x), (pred_y, masks_y)):
        for m in masks:
            _check_binary(m)
        acc = _mae(preds[0], masks[0])
        for p, m in zip(preds[1:], masks[1:]):
            acc = engine.add(acc, _mae(p, m))
        terms.append(engine.scale(acc, 1.0 / len(preds)))
    return engine.add(terms[0], terms[1])


def total_generator_loss(mode, weights, components):
    """Weighted aggregate of the generator-side terms.

    components maps term name -> scalar Tensor; the key set must match the
    mode exactly (supervised runs must not supply a_cyc/a_sparse).
    """
    if mode not in GENERATOR_COMPONENTS:
        raise ValueError("unknown mode %r" % (mode,))
    expected = GENERATOR_COMPONENTS[mode]
    missing = [k for k in expected if k not in components]
    extra = [k for k in components if k not in expected]
    if missing or extra:
        raise ValueError("components for %s mode: missing %s, unexpected %s"
                         % (mode, missing, extra))
    total = engine.add(components["gan_g_xy"], components["gan_g_yx"])
    total = engine.add(total, engine.scale(components["cyc"], weights.lambda_cyc))
    if mode == "unsupervised":
        total = engine.add(total, engine.scale(components["a_cyc"], weights.lambda_a_cyc))
        total = engine.add(total, engine.scale(components["a_sparse"], weights.lambda_a_sparse))
    else:
        total = engine.add(total, engine.scale(components["a_sup"], weights.lambda_a_sup))
    return total


def make_report(mode, weights, components, gan_d_x=0.0, gan_d_y=0.0):
    vals = {k: v.item() for k, v in components.items()}
    rep = LossReport(gan_d_x=gan_d_x, gan_d_y=gan_d_y, **vals)
    rep.total_g = vals["gan_g_xy"] + vals["gan_g_yx"] + weights.lambda_cyc * vals["cyc"]
    if mode == "unsupervised":
        rep.total_g += (weights.lambda_a_cyc * vals["a_cyc"]
                        + weights.lambda_a_sparse * vals["a_sparse"])
    else:
        rep.total_g += weights.lambda_a_sup * vals["a_sup"]
    rep.total_d = gan_d_x + gan_d_y
    return rep


# --- finite-difference checks of each loss term through a small network ---

def _tiny_net(ts, offset, activation):
    x, w1, b1, g1, be1, w2, b2 = ts[offset:offset + 7]
    h = engine.relu(engine.instance_norm(engine.conv2d(x, w1, b1, pad=1), g1, be1))
    out = engine.conv2d(h, w2, b2, pad=1)
    return activation(out) if activation else out


def _net_arrays(rng, in_ch=2, mid_ch=3, out_ch=1, size=5):
    return [rng.uniform(-1, 1, (1, in_ch, size, size)),
            rng.uniform(-0.3, 0.3, (mid_ch, in_ch, 3, 3)),
            rng.uniform(-0.1, 0.1, (mid_ch,)),
            rng.uniform(0.8, 1.2, (mid_ch,)),
            rng.uniform(-0.1, 0.1, (mid_ch,)),
            rng.uniform(-0.3, 0.3, (out_ch, mid_ch, 3, 3)),
            rng.uniform(-0.1, 0.1, (out_ch,))]


def gradcheck_losses(trials=5, eps=1e-5, tol=1e-4, seed=0):
    from .gradcheck import OpCheck, compare_grads

    def gan_d_case(rng):
        arrs = _net_arrays(rng) + [rng.uniform(-1, 1, (1, 2, 5, 5))]
        return arrs, lambda ts: loss_gan_d(_tiny_net(ts, 0, None),
                                           _tiny_net([ts[-1]] + ts[1:7], 0, None))

    def gan_g_case(rng):
        arrs = _net_arrays(rng)
        return arrs, lambda ts: loss_gan_g(_tiny_net(ts, 0, None))

    def cycle_case(rng):
        # targets offset by +3 so the L1 kink is never approached
        arrs = _net_arrays(rng, out_ch=2)
        x_t = arrs[0] + 3.0
        arrs = arrs + [x_t]
        return arrs, lambda ts: loss_cycle(ts[-1], _tiny_net(ts, 0, engine.tanh),
                                           ts[-1], _tiny_net(ts, 0, engine.tanh))

    def attn_cycle_case(rng):
        arrs = _net_arrays(rng) + [rng.uniform(-1, 1, (1, 2, 5, 5))]
        return arrs, lambda ts: loss_attn_cycle(
            _tiny_net(ts, 0, engine.sigmoid),
            engine.shift(_tiny_net([ts[-1]] + ts[1:7], 0, engine.sigmoid), 2.0),
            engine.shift(_tiny_net(ts, 0, engine.sigmoid), -2.0),
            _tiny_net([ts[-1]] + ts[1:7], 0, engine.sigmoid))

    def sparse_case(rng):
        arrs = _net_arrays(rng) + [rng.uniform(-1, 1, (1, 2, 5, 5))]
        return arrs, lambda ts: loss_attn_sparse(
            _tiny_net(ts, 0, engine.sigmoid),
            _tiny_net([ts[-1]] + ts[1:7], 0, engine.sigmoid))

    def supervised_case(rng):
        arrs = _net_arrays(rng)
        m = (rng.uniform(0, 1, (1, 1, 5, 5)) > 0.5).astype(np.float64)
        fwd = lambda ts: loss_attn_supervised(
            [_tiny_net(ts, 0, engine.sigmoid)], [Tensor(m)],
            [engine.shift(_tiny_net(ts, 0, engine.sigmoid), 2.0)], [Tensor(m)])
        return arrs, fwd

    cases = {
        "loss_gan_d@2layer": gan_d_case,
        "loss_gan_g@2layer": gan_g_case,
        "loss_cycle@2layer": cycle_case,
        "loss_attn_cycle@2layer": attn_cycle_case,
        "loss_attn_sparse@2layer": sparse_case,
        "loss_attn_supervised@2layer": supervised_case,
    }
    reports = []
    for i, (name, case) in enumerate(cases.items()):
        rng = np.random.default_rng(seed + 1000 + i)
        worst = 0.0
        for _ in range(trials):
            arrays, forward = case(rng)
            worst = max(worst, compare_grads(arrays, forward, eps))
        reports.append(OpCheck(name, worst, worst <= tol))
    return reports
