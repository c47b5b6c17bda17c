"""Finite-difference verification of every catalog op's backward rule.

All checks run in float64.  Inputs near non-differentiable points (relu /
leaky_relu kinks, abs at 0) are excluded by sampling with |x| > KINK_MARGIN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor

KINK_MARGIN = 1e-3
DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class OpCheck:
    name: str
    max_rel_error: float
    passed: bool


def _uniform(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape).astype(np.float64)


def _away_from_kink(rng, shape):
    x = _uniform(rng, shape)
    sign = np.where(x >= 0, 1.0, -1.0)
    return x + sign * KINK_MARGIN * 2


def _trial(op_name, rng):
    """Returns (arrays, forward) where forward maps leaf Tensors to a scalar."""
    if op_name in ("add", "sub", "mul"):
        a, b = _uniform(rng, (2, 3, 4)), _uniform(rng, (2, 3, 4))
        fn = engine.OP_CATALOG[op_name]
        return [a, b], lambda ts: engine.mean(engine.square(fn(ts[0], ts[1])))
    if op_name == "scale":
        a = _uniform(rng, (3, 5))
        return [a], lambda ts: engine.mean(engine.square(engine.scale(ts[0], 1.7)))
    if op_name == "abs":
        a = _away_from_kink(rng, (4, 4))
        return [a], lambda ts: engine.mean(engine.square(engine.abs_(ts[0])))
    if op_name == "square":
        a = _uniform(rng, (4, 4))
        return [a], lambda ts: engine.mean(engine.square(engine.square(ts[0])))
    if op_name == "mean":
        a = _uniform(rng, (3, 7))
        return [a], lambda ts: engine.square(engine.mean(ts[0]))
    if op_name == "sum":
        a = _uniform(rng, (3, 7))
        return [a], lambda ts: engine.square(engine.scale(engine.sum_(ts[0]), 0.1))
    if op_name in ("relu", "leaky_relu"):
        a = _away_from_kink(rng, (4, 5))
        fn = engine.OP_CATALOG[op_name]
        return [a], lambda ts: engine.mean(engine.square(fn(ts[0])))
    if op_name in ("sigmoid", "tanh"):
        a = _uniform(rng, (4, 5))
        fn = engine.OP_CATALOG[op_name]
        return [a], lambda ts: engine.mean(engine.square(fn(ts[0])))
    if op_name == "conv2d":
        variant = rng.integers(0, 4)
        x = _uniform(rng, (1, 2, 6, 6))
        w = _uniform(rng, (3, 2, 3, 3), -0.5, 0.5)
        b = _uniform(rng, (3,), -0.5, 0.5)
        kwargs = [
            dict(stride=1, pad=1, pad_mode="zero"),
            dict(stride=2, pad=1, pad_mode="zero"),
            dict(stride=1, pad=2, pad_mode="reflect"),
            dict(stride=1, pad=((1, 2), (1, 2)), pad_mode="zero"),
        ][variant]
        return [x, w, b], lambda ts: engine.mean(
            engine.square(engine.conv2d(ts[0], ts[1], ts[2], **kwargs)))
    if op_name == "nearest_upsample":
        a = _uniform(rng, (1, 2, 3, 4))
        return [a], lambda ts: engine.mean(engine.square(engine.nearest_upsample(ts[0])))
    if op_name == "instance_norm":
        x = _uniform(rng, (1, 3, 4, 4))
        g = _uniform(rng, (3,), 0.5, 1.5)
        be = _uniform(rng, (3,), -0.5, 0.5)
        return [x, g, be], lambda ts: engine.mean(
            engine.square(engine.instance_norm(ts[0], ts[1], ts[2])))
    if op_name == "concat":
        a, b = _uniform(rng, (1, 2, 3, 3)), _uniform(rng, (1, 3, 3, 3))
        return [a, b], lambda ts: engine.mean(engine.square(engine.concat([ts[0], ts[1]], axis=1)))
    if op_name == "slice":
        a = _uniform(rng, (2, 5, 3))
        return [a], lambda ts: engine.mean(engine.square(engine.slice_(ts[0], 1, 1, 4)))
    raise ValueError("no trial defined for op %r" % (op_name,))


def compare_grads(arrays, forward, eps=DEFAULT_EPS):
    """Max relative error between backward() grads and central differences."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    forward(leaves).backward()
    analytic = [np.zeros_like(a) if t.grad is None else t.grad
                for a, t in zip(arrays, leaves)]

    worst = 0.0
    for k, a in enumerate(arrays):
        flat = a.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = forward([Tensor(arr.copy()) for arr in arrays]).item()
            flat[i] = orig - eps
            fm = forward([Tensor(arr.copy()) for arr in arrays]).item()
            flat[i] = orig
            num[i] = (fp - fm) / (2 * eps)
        err = np.abs(analytic[k].reshape(-1) - num)
        rel = err / np.maximum(1.0, np.abs(num))
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst


def check_op(op_name, trials=10, eps=DEFAULT_EPS, tol=DEFAULT_TOL, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        arrays, forward = _trial(op_name, rng)
        worst = max(worst, compare_grads(arrays, forward, eps))
    return OpCheck(op_name, worst, worst <= tol)


def run_gradcheck(trials=10, eps=DEFAULT_EPS, tol=DEFAULT_TOL, seed=0,
                  include_losses=True):
    """Check every catalog op once; optionally also each loss term composed
    through a small 2-layer network."""
    reports = [check_op(name, trials, eps, tol, seed + i)
               for i, name in enumerate(engine.OP_CATALOG)]
    if include_losses:
        from . import losses as _losses  # late import: losses sits above the engine
        reports.extend(_losses.gradcheck_losses(trials=max(2, trials // 2),
                                                eps=eps, tol=tol, seed=seed))
    return reports
