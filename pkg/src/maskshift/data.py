"""Two-domain image data: procedural synthetic generator with exact masks,
CycleGAN-style directory ingestion, 8-bit PNG codec, and the resize/flip/crop
augmentation.

Images live in [-1,1]^(3,H,W) float32; masks are binary {0,1}^(1,H,W).
Objects are ellipses carrying axis-aligned horizontal stripes: low-contrast in
domain X, high-contrast in domain Y, so the domain signal is stripe contrast —
a local texture property a convolutional translator can act on.  Backgrounds
come from one shared low-frequency noise distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

AUG_SCALE = 286 / 256  # train-time upscale factor before the random crop


@dataclass
class Sample:
    image: np.ndarray              # float32 (3, H, W) in [-1, 1]
    domain: str                    # "X" or "Y"
    mask: np.ndarray | None = None  # float32 (1, H, W) in {0, 1}
    source_path: str = ""


# ---------------------------------------------------------------- codec

def decode_image(path):
    """8-bit RGB file -> float32 (3,H,W); byte v maps to v/127.5 - 1."""
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError("%s: expected 8-bit RGB, got mode %r" % (path, im.mode))
        arr = np.asarray(im, dtype=np.float32)
    return (arr / 127.5 - 1.0).transpose(2, 0, 1).copy()


def to_bytes(img):
    """[-1,1] float (3,H,W) -> uint8, round half away from zero."""
    v = np.clip(img, -1.0, 1.0).astype(np.float64)
    return np.floor((v + 1.0) * 127.5 + 0.5).astype(np.uint8)


def encode_image(img, path):
    b = to_bytes(img)
    Image.fromarray(b.transpose(1, 2, 0), mode="RGB").save(path)


def decode_mask(path):
    """8-bit grayscale file -> binary (1,H,W); threshold: byte >= 128 is 1."""
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        arr = np.asarray(im)
    return (arr >= 128).astype(np.float32)[None]


def encode_mask(mask, path):
    b = (np.asarray(mask)[0] >= 0.5).astype(np.uint8) * 255
    Image.fromarray(b, mode="L").save(path)


# ---------------------------------------------------------------- resampling

def resize_bilinear(img, out_h, out_w):
    c, h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0).astype(img.dtype)
    wx = (xs - x0).astype(img.dtype)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    rows = img[:, y0c, :] * (1 - wy)[None, :, None] + img[:, y1c, :] * wy[None, :, None]
    out = rows[:, :, x0c] * (1 - wx)[None, None, :] + rows[:, :, x1c] * wx[None, None, :]
    return np.ascontiguousarray(out, dtype=img.dtype)


def resize_nearest(img, out_h, out_w):
    c, h, w = img.shape
    ys = np.clip(np.floor((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), 0, h - 1)
    xs = np.clip(np.floor((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), 0, w - 1)
    return np.ascontiguousarray(img[:, ys, :][:, :, xs])


def augment(sample, rng, image_size, train_mode=True):
    """Train mode: upscale by 286/256, random crop back, flip with p=0.5; the
    mask (nearest-resampled, stays binary) gets the identical transform.
    Test mode: plain resize to image_size."""
    img = sample.image
    mask = sample.mask
    if train_mode:
        inter = math.ceil(image_size * AUG_SCALE)
        img = resize_bilinear(img, inter, inter)
        if mask is not None:
            mask = resize_nearest(mask, inter, inter)
        span = inter - image_size
        # fixed draw order keeps the random stream stable
        oy = int(rng.integers(0, span + 1))
        ox = int(rng.integers(0, span + 1))
        flip = bool(rng.random() < 0.5)
        img = img[:, oy:oy + image_size, ox:ox + image_size]
        if mask is not None:
            mask = mask[:, oy:oy + image_size, ox:ox + image_size]
        if flip:
            img = img[:, :, ::-1]
            if mask is not None:
                mask = mask[:, :, ::-1]
    else:
        if img.shape[1:] != (image_size, image_size):
            img = resize_bilinear(img, image_size, image_size)
            if mask is not None:
                mask = resize_nearest(mask, image_size, image_size)
    img = np.ascontiguousarray(img)
    if mask is not None:
        mask = np.ascontiguousarray(mask)
    return Sample(image=img, domain=sample.domain, mask=mask,
                  source_path=sample.source_path)


# ---------------------------------------------------------------- manifest

IMAGE_DIRS = ("trainA", "trainB", "testA", "testB")
MASK_DIRS = {"A": "masksA", "B": "masksB"}


@dataclass
class DatasetManifest:
    root: Path
    splits: dict = field(default_factory=dict)   # dir name -> sorted list of Paths
    masks: dict = field(default_factory=dict)    # ("A"|"B", stem) -> Path

    @classmethod
    def load(cls, root):
        root = Path(root)
        splits = {}
        for d in IMAGE_DIRS:
            p = root / d
            if not p.is_dir():
                raise ValueError("dataset root %s: missing directory %s" % (root, d))
            files = sorted(f for f in p.iterdir() if f.suffix.lower() == ".png")
            if not files:
                raise ValueError("dataset root %s: %s has no .png images" % (root, d))
            splits[d] = files
        masks = {}
        for dom, d in MASK_DIRS.items():
            p = root / d
            if not p.is_dir():
                continue
            stems = {f.stem: f for split in ("train" + dom, "test" + dom)
                     for f in splits[split]}
            for f in sorted(p.iterdir()):
                if f.suffix.lower() != ".png":
                    continue
                img = stems.get(f.stem)
                if img is None:
                    raise ValueError("mask %s pairs with no %s-domain image" % (f, dom))
                with Image.open(f) as mi, Image.open(img) as ii:
                    if mi.size != ii.size:
                        raise ValueError("mask %s size %s != image %s size %s"
                                         % (f, mi.size, img, ii.size))
                masks[(dom, f.stem)] = f
        return cls(root=root, splits=splits, masks=masks)

    def mask_for(self, domain, image_path):
        return self.masks.get((domain, Path(image_path).stem))

    def has_masks(self, split):
        dom = split[-1]
        return all((dom, f.stem) in self.masks for f in self.splits[split])

    def counts(self):
        return {d: len(v) for d, v in self.splits.items()}


def load_sample(manifest, split, index):
    dom = split[-1]
    path = manifest.splits[split][index]
    mask_path = manifest.mask_for(dom, path)
    return Sample(image=decode_image(path),
                  domain="X" if dom == "A" else "Y",
                  mask=None if mask_path is None else decode_mask(mask_path),
                  source_path=str(path))


# ---------------------------------------------------------------- synthesis

@dataclass
class SynthConfig:
    root: str
    image_size: int = 32
    count_train: int = 400
    count_test: int = 50
    shapes_min: int = 1
    shapes_max: int = 2
    radius_min: float = 0.12   # fraction of image size
    radius_max: float = 0.30
    stripe_period: int = 4
    coverage_min: float = 0.05
    coverage_max: float = 0.45
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError("image_size too small: %d" % self.image_size)
        if not (1 <= self.shapes_min <= self.shapes_max):
            raise ValueError("bad shapes_per_image range")
        if not (0 < self.radius_min <= self.radius_max < 0.5):
            raise ValueError("bad radius range")
        if not (0 < self.coverage_min < self.coverage_max <= 1):
            raise ValueError("bad coverage window")
        if self.stripe_period < 2:
            raise ValueError("stripe_period must be >= 2")


def _background(rng, size):
    # shared across domains: low-frequency value noise, mild color variation
    coarse = rng.uniform(0.35, 0.65, size=(3, 4, 4)).astype(np.float32)
    return resize_bilinear(coarse, size, size)


def _ellipse_mask(rng, cfg):
    size = cfg.image_size
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(200):
        mask = np.zeros((size, size), dtype=bool)
        n = int(rng.integers(cfg.shapes_min, cfg.shapes_max + 1))
        for _ in range(n):
            rx = rng.uniform(cfg.radius_min, cfg.radius_max) * size
            ry = rng.uniform(cfg.radius_min, cfg.radius_max) * size
            cx = rng.uniform(rx, size - rx)
            cy = rng.uniform(ry, size - ry)
            mask |= ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
        cov = mask.mean()
        if cfg.coverage_min <= cov <= cfg.coverage_max:
            return mask
    raise ValueError("could not draw a mask within the coverage window %r"
                     % ((cfg.coverage_min, cfg.coverage_max),))


STRIPE_AMP = {"A": (0.08, 0.15), "B": (0.38, 0.45)}


def _paint_object(rng, img, mask, domain, cfg):
    size = cfg.image_size
    base = rng.uniform(0.45, 0.52)
    amp = rng.uniform(*STRIPE_AMP[domain])
    phase = int(rng.integers(0, cfg.stripe_period))
    yy = np.arange(size)
    band = ((yy + phase) // (cfg.stripe_period // 2 + cfg.stripe_period % 2)) % 2
    stripe = np.where(band == 0, base - amp, base + amp).astype(np.float32)
    field_ = np.broadcast_to(stripe[:, None], (size, size))
    for c in range(3):
        img[c][mask] = field_[mask]
    return img


def _synth_one(cfg, domain, split, index):
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.seed,
                               spawn_key=(("A", "B").index(domain),
                                          ("train", "test").index(split), index)))
    mask = _ellipse_mask(rng, cfg)
    img = _background(rng, cfg.image_size)
    img = _paint_object(rng, img, mask, domain, cfg)
    img = img * 2.0 - 1.0  # [0,1] -> [-1,1]
    return img, mask.astype(np.float32)[None]


def synth_generate(cfg):
    """Writes the full directory layout and returns its manifest."""
    root = Path(cfg.root)
    root.mkdir(parents=True, exist_ok=True)
    for domain in ("A", "B"):
        (root / MASK_DIRS[domain]).mkdir(exist_ok=True)
        for split, count in (("train", cfg.count_train), ("test", cfg.count_test)):
            d = root / (split + domain)
            d.mkdir(exist_ok=True)
            for i in range(count):
                img, mask = _synth_one(cfg, domain, split, i)
                stem = "%s_%04d" % (split, i)
                encode_image(img, d / (stem + ".png"))
                encode_mask(mask, root / MASK_DIRS[domain] / (stem + ".png"))
    return DatasetManifest.load(root)
