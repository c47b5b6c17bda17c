"""Background-consistency metrics and test-set evaluation.

Metrics operate on the 8-bit byte domain (peak 255) after re-encoding,
matching how saved images would be scored.  Background PSNR/SSIM zero out
object pixels in BOTH images via (1 - mask); the PSNR denominator counts all
pixels, zeroed ones included (a background-only variant sits behind
``renormalize=True`` for diagnostics).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import networks

PSNR_CLAMP_DB = 100.0  # stand-in for the +inf sentinel inside aggregates

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2


def _as_byte_planes(img):
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError("expected a (3,H,W) byte-domain image, got %s" % (arr.shape,))
    return arr.astype(np.float64)


def _as_mask(mask, shape):
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3 and m.shape[0] == 1:
        m = m[0]
    if m.shape != shape:
        raise ValueError("mask shape %s does not match image %s" % (m.shape, shape))
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask must be binary")
    return m


def psnr_background(original, generated, mask, renormalize=False):
    """10*log10(255^2 / MSE) over the object-zeroed images; +inf when MSE=0."""
    a = _as_byte_planes(original)
    b = _as_byte_planes(generated)
    if a.shape != b.shape:
        raise ValueError("image shapes differ: %s vs %s" % (a.shape, b.shape))
    m = _as_mask(mask, a.shape[1:])
    bg = 1.0 - m
    diff = (a - b) * bg
    if renormalize:
        n_bg = bg.sum() * a.shape[0]
        if n_bg == 0:
            return math.inf
        mse = float((diff ** 2).sum() / n_bg)
    else:
        mse = float((diff ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _gaussian_kernel():
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _filter_valid(plane, g):
    # separable Gaussian, valid windows only
    win = np.lib.stride_tricks.sliding_window_view(plane, len(g), axis=1)
    tmp = win @ g
    win = np.lib.stride_tricks.sliding_window_view(tmp, len(g), axis=0)
    return win @ g


def ssim_background(original, generated, mask):
    """Mean Gaussian-windowed SSIM over the object-zeroed pair, per channel,
    channel-averaged."""
    a = _as_byte_planes(original)
    b = _as_byte_planes(generated)
    if a.shape != b.shape:
        raise ValueError("image shapes differ: %s vs %s" % (a.shape, b.shape))
    if a.shape[1] < SSIM_WINDOW or a.shape[2] < SSIM_WINDOW:
        raise ValueError("image %s smaller than the %dx%d SSIM window"
                         % (a.shape, SSIM_WINDOW, SSIM_WINDOW))
    m = _as_mask(mask, a.shape[1:])
    bg = 1.0 - m
    g = _gaussian_kernel()
    vals = []
    for c in range(a.shape[0]):
        x = a[c] * bg
        y = b[c] * bg
        mu_x = _filter_valid(x, g)
        mu_y = _filter_valid(y, g)
        var_x = _filter_valid(x * x, g) - mu_x ** 2
        var_y = _filter_valid(y * y, g) - mu_y ** 2
        cov = _filter_valid(x * y, g) - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
        vals.append(float((num / den).mean()))
    return float(np.mean(vals))


def attention_iou(predicted_map, mask, threshold=0.5):
    """IoU between the thresholded attention map and a binary mask; both
    empty counts as 1."""
    p = np.asarray(predicted_map, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if p.ndim == 3:
        p = p[0]
    if m.ndim == 3:
        m = m[0]
    if p.shape != m.shape:
        raise ValueError("map shape %s != mask shape %s" % (p.shape, m.shape))
    pb = p >= threshold
    mb = m >= 0.5
    union = np.logical_or(pb, mb).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pb, mb).sum() / union)


@dataclass
class EvalReport:
    direction: str
    rows: list = field(default_factory=list)  # dicts: id, psnr_bg, ssim_bg, attn_iou

    def _values(self, key):
        return [r[key] for r in self.rows if r.get(key) is not None]

    def aggregates(self):
        out = {}
        for key in ("psnr_bg", "ssim_bg", "attn_iou"):
            vals = self._values(key)
            if not vals:
                continue
            clamped = [min(v, PSNR_CLAMP_DB) if key == "psnr_bg" else v for v in vals]
            out[key] = {"mean": float(np.mean(clamped)),
                        "median": float(np.median(vals))}
        return out


def evaluate_testset(bundle, manifest, direction):
    """Runs the requested mapping over the test split, re-encodes to bytes,
    and scores background PSNR/SSIM and attention IoU (mask-dependent
    metrics are skipped for samples without masks)."""
    if direction not in ("x2y", "y2x"):
        raise ValueError("direction must be x2y or y2x, got %r" % (direction,))
    split = "testA" if direction == "x2y" else "testB"
    mapper = networks.map_g if direction == "x2y" else networks.map_f
    n = len(manifest.splits[split])
    if n == 0:
        raise ValueError("empty test split %s" % split)
    report = EvalReport(direction=direction)
    for i in range(n):
        sample = data_mod.load_sample(manifest, split, i)
        sample = data_mod.augment(sample, np.random.default_rng(0),
                                  bundle.image_size, train_mode=False)
        fake, attn, _ = mapper(bundle, sample.image[None])
        orig_b = data_mod.to_bytes(sample.image)
        fake_b = data_mod.to_bytes(fake.data[0])
        row = {"id": Path(sample.source_path).stem,
               "psnr_bg": None, "ssim_bg": None, "attn_iou": None}
        if sample.mask is not None:
            row["psnr_bg"] = psnr_background(orig_b, fake_b, sample.mask)
            row["ssim_bg"] = ssim_background(orig_b, fake_b, sample.mask)
            row["attn_iou"] = attention_iou(attn.data[0], sample.mask)
        report.rows.append(row)
    return report


def write_report_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "psnr_bg", "ssim_bg", "attn_iou"])
        for r in report.rows:
            w.writerow([r["id"]] + ["" if r[k] is None else "%.6f" % r[k]
                                    for k in ("psnr_bg", "ssim_bg", "attn_iou")])


def write_report_markdown(report, path):
    agg = report.aggregates()
    lines = ["| metric | mean | median |", "|---|---|---|"]
    for key, stats in agg.items():
        lines.append("| %s (%s) | %.4f | %.4f |"
                     % (key, report.direction, stats["mean"], stats["median"]))
    Path(path).write_text("\n".join(lines) + "\n")
