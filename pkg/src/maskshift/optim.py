"""Adam with bias correction, plus the keep-then-linear-decay LR schedule."""

from __future__ import annotations

import logging

import numpy as np

log = logging.getLogger(__name__)


def lr_at_epoch(base_lr, epochs_keep, epochs_decay, epoch):
    """Constant for the first epochs_keep epochs, then linear to exactly 0."""
    total = epochs_keep + epochs_decay
    if not (0 <= epoch <= total):
        raise ValueError("epoch %d out of range [0, %d]" % (epoch, total))
    if epoch < epochs_keep:
        return base_lr
    if epochs_decay == 0:
        return 0.0
    return base_lr * (1.0 - (epoch - epochs_keep) / epochs_decay)


class Adam:
    """Bias-corrected Adam over an ordered set of named parameter tensors.

    Moments live per parameter; one step counter per optimizer instance.
    Parameters whose gradient is non-finite are skipped for that step.
    """

    def __init__(self, named_params, beta1=0.5, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in self.named_params}
        self.v = {n: np.zeros_like(t.data) for n, t in self.named_params}

    def zero_grad(self):
        for _, t in self.named_params:
            t.grad = None

    def step(self, lr):
        if lr < 0:
            raise ValueError("lr must be >= 0, got %r" % (lr,))
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, t in self.named_params:
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            elif not np.all(np.isfinite(g)):
                log.warning("skipping update for %s: non-finite gradient", name)
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if lr:
                t.data -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_arrays(self):
        """Flat name -> array view of the moment state (for checkpointing)."""
        out = {}
        for name in self.m:
            out["m/" + name] = self.m[name]
            out["v/" + name] = self.v[name]
        return out
