"""Command-line entry point.

Subcommands: gen-data, train, eval, infer, gradcheck.  Diagnostics go to
stderr, data to files; exit status 0 means no rejection occurred.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data as data_mod
from . import gradcheck as gradcheck_mod
from . import metrics as metrics_mod
from .train import load_checkpoint, train_loop


def _common_overrides(args):
    return {
        "seed": getattr(args, "seed", None),
        "lambda_attn": getattr(args, "lambda_attn", None),
        "mode": getattr(args, "mode", None),
        "out_dir": getattr(args, "out", None),
    }


def cmd_gen_data(args):
    cfg = config_mod.load_run_config(args.config, _common_overrides(args))
    manifest = data_mod.synth_generate(config_mod.synth_config_from(cfg))
    print("generated dataset at %s" % manifest.root)
    for split, count in sorted(manifest.counts().items()):
        print("  %s: %d images" % (split, count))
    print("  masks: %d" % len(manifest.masks))
    return 0


def cmd_train(args):
    cfg = config_mod.load_run_config(args.config, _common_overrides(args))
    manifest = data_mod.DatasetManifest.load(cfg["data_root"])
    train_cfg = config_mod.train_config_from(cfg)
    final = train_loop(train_cfg, manifest, cfg["out_dir"], resume=args.resume)
    print("final checkpoint: %s" % final)
    return 0


def cmd_eval(args):
    _, bundle, _, _, _, _ = load_checkpoint(args.checkpoint)
    manifest = data_mod.DatasetManifest.load(args.dataset)
    report = metrics_mod.evaluate_testset(bundle, manifest, args.direction)
    out = Path(args.out or "eval_%s" % args.direction)
    out.mkdir(parents=True, exist_ok=True)
    metrics_mod.write_report_csv(report, out / "report.csv")
    metrics_mod.write_report_markdown(report, out / "report.md")
    agg = report.aggregates()
    if not agg:
        print("no masks in test split: PSNR/SSIM/IoU skipped", file=sys.stderr)
    for key, stats in agg.items():
        print("%s: mean=%.4f median=%.4f" % (key, stats["mean"], stats["median"]))
    print("report written to %s" % out)
    return 0


def cmd_infer(args):
    from . import networks
    _, bundle, _, _, _, _ = load_checkpoint(args.checkpoint)
    img = data_mod.decode_image(args.input)
    if img.shape[1:] != (bundle.image_size, bundle.image_size):
        img = data_mod.resize_bilinear(img, bundle.image_size, bundle.image_size)
    mapper = networks.map_g if args.direction == "x2y" else networks.map_f
    fake, attn, trans = mapper(bundle, img[None])
    prefix = args.out_prefix
    data_mod.encode_image(fake.data[0], prefix + "_composite.png")
    from PIL import Image
    a8 = np.floor(np.clip(attn.data[0, 0], 0, 1) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(a8, mode="L").save(prefix + "_attention.png")
    data_mod.encode_image(trans.data[0], prefix + "_transformed.png")
    print("wrote %s_{composite,attention,transformed}.png" % prefix)
    return 0


def cmd_gradcheck(args):
    reports = gradcheck_mod.run_gradcheck(trials=args.trials)
    width = max(len(r.name) for r in reports)
    failed = []
    for r in reports:
        print("%-*s  max_rel_err=%.3e  %s"
              % (width, r.name, r.max_rel_error, "pass" if r.passed else "FAIL"))
        if not r.passed:
            failed.append(r)
    if failed:
        print("gradcheck failed for: %s" % ", ".join(r.name for r in failed),
              file=sys.stderr)
        return 1
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="maskshift",
                                description="Attention-masked unpaired image translation")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", default=None, help="flat YAML config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--lambda-attn", dest="lambda_attn", type=float, default=None,
                        help="sparse-loss weight override")
        sp.add_argument("--mode", choices=["unsupervised", "supervised"], default=None)
        sp.add_argument("--out", default=None, help="output directory override")

    sp = sub.add_parser("gen-data", help="generate the synthetic two-domain dataset")
    add_common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model")
    add_common(sp)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    sp.add_argument("checkpoint")
    sp.add_argument("dataset")
    sp.add_argument("--direction", choices=["x2y", "y2x"], default="x2y")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", help="translate one image")
    sp.add_argument("checkpoint")
    sp.add_argument("input")
    sp.add_argument("out_prefix")
    sp.add_argument("--direction", choices=["x2y", "y2x"], default="x2y")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every op")
    sp.add_argument("--trials", type=int, default=10)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
