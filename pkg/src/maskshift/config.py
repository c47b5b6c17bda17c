"""Flat on-disk run configuration.

One YAML file holding a flat mapping of scalar keys.  Unknown keys are
rejected; every key has a default.  Precedence: command-line flags override
file keys, file keys override defaults.
"""

from __future__ import annotations

import yaml

from .losses import LossWeights
from .train import TrainConfig
from .data import SynthConfig

DEFAULTS = {
    # run
    "mode": "unsupervised",
    "seed": 0,
    "data_root": "data/synthetic",
    "out_dir": "runs/default",
    # model / optimization
    "image_size": 32,
    "width_base": 16,
    "lambda_cyc": 10.0,
    "lambda_a_cyc": 1.0,
    "lambda_attn": 1.0,          # sparse-loss weight
    "lambda_a_sup": 1.0,
    "base_lr": 2e-4,
    "epochs_keep": 100,
    "epochs_decay": 100,
    "buffer_capacity": 50,
    "adam_beta1": 0.5,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "checkpoint_every": 10,
    "sparse_warmup_epochs": 5,
    # synthetic data generation
    "synth_count_train": 400,
    "synth_count_test": 50,
    "synth_shapes_min": 1,
    "synth_shapes_max": 2,
    "synth_radius_min": 0.12,
    "synth_radius_max": 0.30,
    "synth_stripe_period": 4,
    "synth_coverage_min": 0.05,
    "synth_coverage_max": 0.45,
}


def load_run_config(path=None, overrides=None):
    """Merged flat config dict; fail-closed on unknown keys."""
    cfg = dict(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise ValueError("%s: config must be a flat key-value mapping" % path)
        for key, value in doc.items():
            if key not in DEFAULTS:
                raise ValueError("%s: unknown config key %r" % (path, key))
            if isinstance(value, (dict, list)):
                raise ValueError("%s: key %r must be a scalar" % (path, key))
            cfg[key] = value
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in DEFAULTS:
            raise ValueError("unknown config key %r" % (key,))
        cfg[key] = value
    return cfg


def train_config_from(cfg):
    mode = cfg["mode"]
    if mode == "supervised":
        weights = LossWeights(cfg["lambda_cyc"], 0.0, 0.0, cfg["lambda_a_sup"])
    else:
        weights = LossWeights(cfg["lambda_cyc"], cfg["lambda_a_cyc"],
                              cfg["lambda_attn"], cfg["lambda_a_sup"])
    return TrainConfig(mode=mode, weights=weights, base_lr=float(cfg["base_lr"]),
                       epochs_keep=int(cfg["epochs_keep"]),
                       epochs_decay=int(cfg["epochs_decay"]),
                       buffer_capacity=int(cfg["buffer_capacity"]),
                       seed=int(cfg["seed"]), image_size=int(cfg["image_size"]),
                       width_base=int(cfg["width_base"]),
                       adam_beta1=float(cfg["adam_beta1"]),
                       adam_beta2=float(cfg["adam_beta2"]),
                       adam_eps=float(cfg["adam_eps"]),
                       checkpoint_every=int(cfg["checkpoint_every"]),
                       sparse_warmup_epochs=int(cfg["sparse_warmup_epochs"]))


def synth_config_from(cfg):
    return SynthConfig(root=cfg["data_root"], image_size=int(cfg["image_size"]),
                       count_train=int(cfg["synth_count_train"]),
                       count_test=int(cfg["synth_count_test"]),
                       shapes_min=int(cfg["synth_shapes_min"]),
                       shapes_max=int(cfg["synth_shapes_max"]),
                       radius_min=float(cfg["synth_radius_min"]),
                       radius_max=float(cfg["synth_radius_max"]),
                       stripe_period=int(cfg["synth_stripe_period"]),
                       coverage_min=float(cfg["synth_coverage_min"]),
                       coverage_max=float(cfg["synth_coverage_max"]),
                       seed=int(cfg["seed"]))
