"""Alternating adversarial training loop: generator side (both attention and
transformation nets, one combined objective) first, then each discriminator on
real samples and replay-buffered fakes.

Every random draw comes from one of five named, seeded streams (init,
shuffle, augment, buffer-x, buffer-y) whose states are checkpointed, so a
save -> load -> continue run reproduces an uninterrupted run bit-exactly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as data_mod
from . import losses as losses_mod
from . import networks
from .engine import Tensor
from .losses import LossWeights, REPORT_COLUMNS
from .optim import Adam, lr_at_epoch

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "step"] + list(REPORT_COLUMNS) + ["lr"]
RNG_STREAMS = ("shuffle", "augment", "buffer_x", "buffer_y")


@dataclass
class TrainConfig:
    mode: str = "unsupervised"
    weights: LossWeights = field(default_factory=LossWeights)
    base_lr: float = 2e-4
    epochs_keep: int = 100
    epochs_decay: int = 100
    batch_size: int = 1
    buffer_capacity: int = 50
    seed: int = 0
    image_size: int = 32
    width_base: int = 16
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 10
    # epochs over which the sparse-loss weight ramps 0 -> lambda_a_sparse;
    # keeps the attention maps open until the adversarial signal reaches them
    sparse_warmup_epochs: int = 5

    def __post_init__(self):
        if self.mode not in ("unsupervised", "supervised"):
            raise ValueError("mode must be unsupervised or supervised, got %r" % self.mode)
        if self.batch_size != 1:
            raise ValueError("batch_size is fixed to 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if self.epochs_keep < 0 or self.epochs_decay < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.sparse_warmup_epochs < 0:
            raise ValueError("sparse_warmup_epochs must be >= 0")

    @property
    def total_epochs(self):
        return self.epochs_keep + self.epochs_decay

    def to_dict(self):
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


class ReplayBuffer:
    """Bounded pool of past fakes: store until full, then 50/50 swap."""

    def __init__(self, capacity, rng):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.rng = rng
        self.stored = []

    def query(self, fresh):
        if self.capacity == 0:
            return fresh
        if len(self.stored) < self.capacity:
            self.stored.append(fresh.copy())
            return fresh
        if self.rng.random() < 0.5:
            return fresh
        i = int(self.rng.integers(0, self.capacity))
        evicted = self.stored[i]
        self.stored[i] = fresh.copy()
        return evicted


def sparse_ramp(config, epoch):
    """Warm-up factor on the sparse-loss weight for the given epoch."""
    if config.sparse_warmup_epochs == 0:
        return 1.0
    return min(1.0, epoch / config.sparse_warmup_epochs)


def train_step(bundle, sample_x, sample_y, config, opts, buffers, lr,
               sparse_scale=1.0):
    """One generator update followed by one update of each discriminator.
    Returns the LossReport for this iteration."""
    weights = config.weights
    if sparse_scale != 1.0:
        weights = replace(weights, lambda_a_sparse=weights.lambda_a_sparse * sparse_scale)
    x = Tensor(sample_x.image[None])
    y = Tensor(sample_y.image[None])

    fake_y, a_x_x, t_x_x = networks.map_g(bundle, x)
    rec_x, a_y_fake_y, _ = networks.map_f(bundle, fake_y)
    fake_x, a_y_y, t_y_y = networks.map_f(bundle, y)
    rec_y, a_x_fake_x, _ = networks.map_g(bundle, fake_x)

    components = {
        "gan_g_xy": losses_mod.loss_gan_g(networks.discriminator_forward(bundle.d_y, fake_y)),
        "gan_g_yx": losses_mod.loss_gan_g(networks.discriminator_forward(bundle.d_x, fake_x)),
        "cyc": losses_mod.loss_cycle(x, rec_x, y, rec_y),
    }
    if config.mode == "unsupervised":
        components["a_cyc"] = losses_mod.loss_attn_cycle(a_x_x, a_y_fake_y, a_y_y, a_x_fake_x)
        components["a_sparse"] = losses_mod.loss_attn_sparse(a_x_x, a_y_y)
    else:
        if sample_x.mask is None or sample_y.mask is None:
            raise ValueError("supervised mode requires masks on both samples")
        components["a_sup"] = losses_mod.loss_attn_supervised(
            [a_x_x], [Tensor(sample_x.mask[None])],
            [a_y_y], [Tensor(sample_y.mask[None])])

    total_g = losses_mod.total_generator_loss(config.mode, weights, components)
    if not np.isfinite(total_g.item()):
        log.warning("non-finite generator loss; step aborted")
        return losses_mod.make_report(config.mode, weights, components)

    for opt in opts.values():
        opt.zero_grad()
    total_g.backward()
    opts["g"].step(lr)

    d_losses = {}
    for key, dnet, real, fake, buf in (
            ("gan_d_y", bundle.d_y, y, fake_y, buffers["y"]),
            ("gan_d_x", bundle.d_x, x, fake_x, buffers["x"])):
        pooled = Tensor(buf.query(fake.data.copy()))
        loss_d = losses_mod.loss_gan_d(networks.discriminator_forward(dnet, real),
                                       networks.discriminator_forward(dnet, pooled))
        if not np.isfinite(loss_d.item()):
            log.warning("non-finite %s loss; discriminator step aborted", key)
            d_losses[key] = loss_d.item()
            continue
        opt = opts["d_y" if key == "gan_d_y" else "d_x"]
        opt.zero_grad()
        loss_d.backward()
        opt.step(lr)
        d_losses[key] = loss_d.item()

    return losses_mod.make_report(config.mode, weights, components,
                                  gan_d_x=d_losses["gan_d_x"],
                                  gan_d_y=d_losses["gan_d_y"])


def _make_rngs(seed):
    root = np.random.SeedSequence(seed)
    children = root.spawn(1 + len(RNG_STREAMS))
    init = np.random.default_rng(children[0])
    streams = {name: np.random.default_rng(children[i + 1])
               for i, name in enumerate(RNG_STREAMS)}
    return init, streams


def _make_optimizers(bundle, config):
    gen_params = []
    for net_name, net in bundle.generator_networks():
        gen_params.extend((net_name + "/" + n, t) for n, t in net.named_tensors())
    mk = lambda ps: Adam(ps, config.adam_beta1, config.adam_beta2, config.adam_eps)
    return {
        "g": mk(gen_params),
        "d_x": mk([("d_x/" + n, t) for n, t in bundle.d_x.named_tensors()]),
        "d_y": mk([("d_y/" + n, t) for n, t in bundle.d_y.named_tensors()]),
    }


def save_checkpoint(path, bundle, config, opts, buffers, rng_streams, epoch):
    meta = {
        "config": config.to_dict(),
        "epoch": epoch,
        "adam_steps": {k: o.step_count for k, o in opts.items()},
        "rng": {name: rng_streams[name].bit_generator.state for name in RNG_STREAMS},
        "buffer_sizes": {k: len(b.stored) for k, b in buffers.items()},
    }
    arrays = {}
    for name, t in bundle.named_tensors().items():
        arrays["param/" + name] = t.data
    for key, opt in opts.items():
        for name, arr in opt.state_arrays().items():
            arrays["adam_%s/%s" % (key, name)] = arr
    for key, buf in buffers.items():
        for i, img in enumerate(buf.stored):
            arrays["buffer_%s/%d" % (key, i)] = img
    ckpt.save(path, meta, arrays)


def load_checkpoint(path):
    """Rebuilds (config, bundle, opts, buffers, rng_streams, epoch)."""
    meta, arrays = ckpt.load(path)
    config = TrainConfig.from_dict(meta["config"])
    init, rng_streams = _make_rngs(config.seed)
    bundle = networks.build_bundle(config.width_base, 3, config.image_size, init)
    for name, t in bundle.named_tensors().items():
        key = "param/" + name
        if key not in arrays:
            raise ckpt.CheckpointError("%s: missing tensor %s" % (path, key))
        if arrays[key].shape != t.data.shape:
            raise ckpt.CheckpointError("%s: tensor %s shape %s != architecture shape %s"
                                       % (path, key, arrays[key].shape, t.data.shape))
        t.data[...] = arrays[key]
    opts = _make_optimizers(bundle, config)
    for key, opt in opts.items():
        opt.step_count = int(meta["adam_steps"][key])
        for name in opt.m:
            opt.m[name][...] = arrays["adam_%s/m/%s" % (key, name)]
            opt.v[name][...] = arrays["adam_%s/v/%s" % (key, name)]
    for name in RNG_STREAMS:
        state = meta["rng"][name]
        rng_streams[name].bit_generator.state = state
    buffers = {k: ReplayBuffer(config.buffer_capacity, rng_streams["buffer_" + k])
               for k in ("x", "y")}
    for key, buf in buffers.items():
        for i in range(int(meta["buffer_sizes"][key])):
            buf.stored.append(arrays["buffer_%s/%d" % (key, i)].copy())
    return config, bundle, opts, buffers, rng_streams, int(meta["epoch"])


def _fmt(v):
    return "%.9g" % v


def dump_grid(bundle, sample, path):
    """Six-column strip: input | attention | transformed | background layer |
    object layer | composite."""
    x = sample.image[None]
    fake, a, t = networks.map_g(bundle, Tensor(x))
    a3 = np.repeat(a.data[0], 3, axis=0)
    cols = [x[0], a3 * 2.0 - 1.0, t.data[0],
            (1.0 - a.data[0]) * x[0] + (a.data[0] - 1.0),   # background layer, zeros -> -1
            a.data[0] * t.data[0] + (a.data[0] - 1.0),      # object layer
            fake.data[0]]
    strip = np.concatenate(cols, axis=2)
    data_mod.encode_image(strip, path)


def train_loop(config, manifest, out_dir, resume=None, progress_sink=None):
    """Runs the full schedule; returns the final checkpoint path."""
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out_dir / "grids").mkdir(parents=True, exist_ok=True)

    if config.mode == "supervised":
        for split in ("trainA", "trainB"):
            if not manifest.has_masks(split):
                raise ValueError("supervised mode requires masks for every %s image" % split)

    train_a = [data_mod.load_sample(manifest, "trainA", i)
               for i in range(len(manifest.splits["trainA"]))]
    train_b = [data_mod.load_sample(manifest, "trainB", i)
               for i in range(len(manifest.splits["trainB"]))]

    if resume is not None:
        loaded_config, bundle, opts, buffers, rngs, start_epoch = load_checkpoint(resume)
        if loaded_config.to_dict() != config.to_dict():
            raise ValueError("resume checkpoint was written with a different config")
    else:
        init, rngs = _make_rngs(config.seed)
        bundle = networks.build_bundle(config.width_base, 3, config.image_size, init)
        opts = _make_optimizers(bundle, config)
        buffers = {k: ReplayBuffer(config.buffer_capacity, rngs["buffer_" + k])
                   for k in ("x", "y")}
        start_epoch = 0

    grid_sample = data_mod.load_sample(manifest, "testA", 0) \
        if manifest.splits.get("testA") else train_a[0]
    grid_sample = data_mod.augment(grid_sample, np.random.default_rng(0),
                                   config.image_size, train_mode=False)

    n_a, n_b = len(train_a), len(train_b)
    steps_per_epoch = max(n_a, n_b)
    final_path = None
    csv_path = out_dir / ("loss.csv" if resume is None else "loss_resumed.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for epoch in range(start_epoch, config.total_epochs):
            lr = lr_at_epoch(config.base_lr, config.epochs_keep, config.epochs_decay, epoch)
            order_a = rngs["shuffle"].permutation(n_a)
            order_b = rngs["shuffle"].permutation(n_b)
            for step in range(steps_per_epoch):
                sx = data_mod.augment(train_a[order_a[step % n_a]], rngs["augment"],
                                      config.image_size)
                sy = data_mod.augment(train_b[order_b[step % n_b]], rngs["augment"],
                                      config.image_size)
                report = train_step(bundle, sx, sy, config, opts, buffers, lr,
                                    sparse_scale=sparse_ramp(config, epoch))
                writer.writerow([epoch, step] + [_fmt(v) for v in report.row()]
                                + [_fmt(lr)])
                if progress_sink is not None:
                    progress_sink(epoch, step, report)
            if (epoch + 1) % config.checkpoint_every == 0 or epoch == config.total_epochs - 1:
                path = out_dir / "checkpoints" / ("epoch_%04d.ckpt" % (epoch + 1))
                save_checkpoint(path, bundle, config, opts, buffers, rngs, epoch + 1)
                dump_grid(bundle, grid_sample, out_dir / "grids" / ("epoch_%04d.png" % (epoch + 1)))
                final_path = path
    if final_path is None:  # zero-epoch schedule: still persist the state
        final_path = out_dir / "checkpoints" / "epoch_0000.ckpt"
        save_checkpoint(final_path, bundle, config, opts, buffers, rngs, start_epoch)
    return final_path
