"""Scikit-learn style front end: fit on a two-domain image directory, then
transform arrays of images between domains."""

from __future__ import annotations

import tempfile

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import data as data_mod
from . import metrics as metrics_mod
from . import networks
from .losses import LossWeights
from .train import TrainConfig, train_loop


def check_image_batch(X, image_size, channels=3):
    """Validates and returns a float32 (n, channels, image_size, image_size)
    batch in [-1, 1]; accepts a single (C,H,W) image or a stack."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != channels:
        raise ValueError("expected (n, %d, H, W) images, got shape %s"
                         % (channels, arr.shape))
    if arr.shape[2] != image_size or arr.shape[3] != image_size:
        raise ValueError("expected %dx%d images, got shape %s"
                         % (image_size, image_size, arr.shape))
    if not np.all(np.isfinite(arr)):
        raise ValueError("images contain non-finite values")
    if arr.min() < -1.0 - 1e-5 or arr.max() > 1.0 + 1e-5:
        raise ValueError("image values must lie in [-1, 1]")
    return arr


class AttentionTranslator(BaseEstimator, TransformerMixin):
    """Unpaired domain translator with a learned attention mask.

    ``fit`` trains on a CycleGAN-style dataset directory (trainA/trainB,
    optional masksA/masksB); ``transform`` maps images across domains while
    compositing the original background back in.
    """

    def __init__(self, mode="unsupervised", image_size=32, width_base=16,
                 lambda_cyc=10.0, lambda_a_cyc=1.0, lambda_attn=1.0,
                 lambda_a_sup=1.0, base_lr=2e-4, epochs_keep=100,
                 epochs_decay=100, buffer_capacity=50, seed=0,
                 adam_beta1=0.5, adam_beta2=0.999, adam_eps=1e-8,
                 checkpoint_every=10, sparse_warmup_epochs=5, out_dir=None):
        self.mode = mode
        self.image_size = image_size
        self.width_base = width_base
        self.lambda_cyc = lambda_cyc
        self.lambda_a_cyc = lambda_a_cyc
        self.lambda_attn = lambda_attn
        self.lambda_a_sup = lambda_a_sup
        self.base_lr = base_lr
        self.epochs_keep = epochs_keep
        self.epochs_decay = epochs_decay
        self.buffer_capacity = buffer_capacity
        self.seed = seed
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.checkpoint_every = checkpoint_every
        self.sparse_warmup_epochs = sparse_warmup_epochs
        self.out_dir = out_dir

    def _train_config(self):
        if self.mode == "supervised":
            weights = LossWeights(self.lambda_cyc, 0.0, 0.0, self.lambda_a_sup)
        else:
            weights = LossWeights(self.lambda_cyc, self.lambda_a_cyc,
                                  self.lambda_attn, self.lambda_a_sup)
        return TrainConfig(mode=self.mode, weights=weights, base_lr=self.base_lr,
                           epochs_keep=self.epochs_keep, epochs_decay=self.epochs_decay,
                           buffer_capacity=self.buffer_capacity, seed=self.seed,
                           image_size=self.image_size, width_base=self.width_base,
                           adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
                           adam_eps=self.adam_eps, checkpoint_every=self.checkpoint_every,
                           sparse_warmup_epochs=self.sparse_warmup_epochs)

    def fit(self, X, y=None, resume=None, progress_sink=None):
        """X: dataset root path or a DatasetManifest."""
        manifest = X if isinstance(X, data_mod.DatasetManifest) \
            else data_mod.DatasetManifest.load(X)
        config = self._train_config()
        out_dir = self.out_dir or tempfile.mkdtemp(prefix="maskshift_fit_")
        self.checkpoint_path_ = train_loop(config, manifest, out_dir,
                                           resume=resume, progress_sink=progress_sink)
        from .train import load_checkpoint
        _, self.bundle_, _, _, _, _ = load_checkpoint(self.checkpoint_path_)
        self.manifest_ = manifest
        return self

    def _check_fitted(self):
        if not hasattr(self, "bundle_"):
            raise RuntimeError("estimator is not fitted; call fit() first")

    def transform(self, X, direction="x2y"):
        """Translates a batch of [-1,1] images; returns the composites."""
        self._check_fitted()
        if direction not in ("x2y", "y2x"):
            raise ValueError("direction must be x2y or y2x, got %r" % (direction,))
        arr = check_image_batch(X, self.image_size)
        mapper = networks.map_g if direction == "x2y" else networks.map_f
        out = np.empty_like(arr)
        for i in range(arr.shape[0]):
            fake, _, _ = mapper(self.bundle_, arr[i][None])
            out[i] = fake.data[0]
        return out

    def attention_maps(self, X, direction="x2y"):
        """Predicted [0,1] attention maps, shape (n, 1, H, W)."""
        self._check_fitted()
        arr = check_image_batch(X, self.image_size)
        net = self.bundle_.a_x if direction == "x2y" else self.bundle_.a_y
        out = np.empty((arr.shape[0], 1, self.image_size, self.image_size),
                       dtype=np.float32)
        for i in range(arr.shape[0]):
            out[i] = networks.attention_forward(net, arr[i][None]).data[0]
        return out

    def evaluate(self, manifest=None, direction="x2y"):
        self._check_fitted()
        manifest = manifest or self.manifest_
        if not isinstance(manifest, data_mod.DatasetManifest):
            manifest = data_mod.DatasetManifest.load(manifest)
        return metrics_mod.evaluate_testset(self.bundle_, manifest, direction)

    def score(self, X=None, y=None, direction="x2y"):
        """Median background PSNR over the test split (higher is better)."""
        report = self.evaluate(X, direction)
        agg = report.aggregates()
        if "psnr_bg" not in agg:
            raise ValueError("test split has no masks; background PSNR undefined")
        return agg["psnr_bg"]["median"]
