"""Command-line entry point.

Exit codes: 0 success, 1 usage errors, 2 data/file errors, 3 numeric
failures (CG divergence, non-finite loss, failed gradient checks).
Architectural choices come from JSON config files; flags cover paths
and scales only. HSR_SEED overrides the config seed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import gradcheck, hqs, imaging, metrics, network, training
from .errors import CheckpointError, ConvergenceError, TrainingDiverged

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _seed_override(seed):
    env = os.environ.get("HSR_SEED", "")
    return int(env) if env else seed


def _load_net_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if "network" in raw:
        raw = raw["network"]
    return network.HsrConfig.from_dict(raw)


def _infer_image(img, cfg, store):
    with ad.no_grad():
        out = network.hsrnet_forward(ad.Tensor(imaging.to_tensor_array(img)), cfg, store)
    return imaging.from_tensor_array(out.data)


def cmd_train(args):
    cfg = training.TrainConfig.from_json_file(args.config)
    cfg.seed = _seed_override(cfg.seed)
    result = training.train(cfg)
    print(f"trained {len(result.losses)} steps; final loss {result.losses[-1]:.6f}")
    print(f"checkpoint written to {result.checkpoint_path}")
    return EXIT_OK


def cmd_infer(args):
    loaded = training.load_checkpoint(args.ckpt)
    sr = _infer_image(imaging.load(args.input), loaded.config, loaded.store)
    imaging.save(sr, args.output)
    print(f"{args.output}: {sr.height}x{sr.width}")
    return EXIT_OK


def cmd_degrade(args):
    img = imaging.center_crop_to_multiple(imaging.load(args.input), args.scale)
    lr = imaging.bicubic_resize(img, 1.0 / args.scale, antialias=True)
    imaging.save(lr, args.output)
    print(f"{args.output}: {lr.height}x{lr.width}")
    return EXIT_OK


def cmd_eval(args):
    loaded = training.load_checkpoint(args.ckpt)
    scale = args.scale
    if scale != loaded.config.scale:
        raise ValueError(f"--scale {scale} does not match checkpoint scale {loaded.config.scale}")
    crop = scale if args.crop is None else args.crop
    y_only = not args.rgb
    paths = sorted(
        p for p in Path(args.hr_dir).iterdir() if p.suffix.lower() in (".png", ".ppm")
    )
    if not paths:
        raise ValueError(f"no .png/.ppm images found in {args.hr_dir}")
    report = metrics.EvalReport()
    for path in paths:
        hr = imaging.center_crop_to_multiple(imaging.load(path), scale)
        lr = imaging.bicubic_resize(hr, 1.0 / scale, antialias=True)
        sr = _infer_image(lr, loaded.config, loaded.store)
        try:
            lss_value = metrics.lss_image(sr)
        except ValueError:
            lss_value = math.nan
        report.rows.append(
            metrics.EvalRow(
                name=path.name,
                psnr=metrics.psnr(sr, hr, crop=crop, y_only=y_only),
                ssim=metrics.ssim(sr, hr, y_only=y_only),
                lss=lss_value,
            )
        )
    lines = ["name,psnr,ssim,lss"]
    for row in report.rows:
        lines.append(
            f"{row.name},{metrics.format_metric(row.psnr)},"
            f"{metrics.format_metric(row.ssim)},{metrics.format_metric(row.lss)}"
        )
    text = "\n".join(lines) + "\n"
    if args.csv:
        imaging.atomic_write_bytes(args.csv, text.encode("ascii"))
    else:
        print(text, end="")
    print(
        f"mean psnr {report.mean('psnr'):.4f} dB, mean ssim {report.mean('ssim'):.4f}, "
        f"mean lss {report.mean('lss'):.4f} over {len(report.rows)} images"
    )
    return EXIT_OK


def cmd_lss(args):
    print(f"{metrics.lss_image(imaging.load(args.input)):.6f}")
    return EXIT_OK


def cmd_params(args):
    cfg = _load_net_config(args.config)
    total, breakdown = network.param_count(cfg)
    for module, count in breakdown.items():
        print(f"{module:12s} {count:>10,}")
    print(f"{'total':12s} {total:>10,}")
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck.run_suite(seed=args.seed)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:20s} {r.cases:3d} cases  max rel err {r.max_rel_err:.3e}  {status}")
        all_ok = all_ok and r.passed
    print("all ops passed" if all_ok else "gradient checks FAILED")
    return EXIT_OK if all_ok else EXIT_NUMERIC


def cmd_hqs_demo(args):
    img = imaging.center_crop_to_multiple(imaging.load(args.input), args.scale)
    gray = imaging.rgb_to_y(img)
    op = hqs.DegradationOperator(hqs.gaussian_kernel(9, 1.2), scale=args.scale)
    lr = op.apply(gray)
    cfg = hqs.HqsConfig(iterations=args.iters)
    restored, history = hqs.hqs_run(lr, op, cfg)
    bicubic = imaging.resize_array(lr, float(args.scale), antialias=False)

    def psnr2d(a, b):
        mse = float(np.mean((np.clip(a, 0, 1) - b) ** 2))
        return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)

    print(f"bicubic upscale: {psnr2d(bicubic, gray):.2f} dB")
    print(f"hqs ({args.iters} iterations): {psnr2d(restored, gray):.2f} dB")
    if args.history:
        imaging.atomic_write_bytes(args.history, hqs.history_csv(history).encode("ascii"))
        print(f"history written to {args.history}")
    return EXIT_OK


def cmd_features(args):
    loaded = training.load_checkpoint(args.ckpt)
    img = imaging.load(args.input)
    record = {}
    with ad.no_grad():
        network.hsrnet_forward(
            ad.Tensor(imaging.to_tensor_array(img)), loaded.config, loaded.store, record=record
        )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for stage in network.FEATURE_STAGES:
        for name, fmap in network.feature_maps(record, stage):
            imaging.save_gray(fmap, out_dir / f"{name}.png")
            count += 1
    print(f"wrote {count} feature maps to {out_dir}")
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="hsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("degrade", help="bicubic-downscale an image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("eval", help="evaluate a checkpoint over an HR directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--y-only", action="store_true", default=True, help="luma metrics (default)")
    group.add_argument("--rgb", action="store_true", help="RGB metrics instead of luma")
    p.add_argument("--crop", type=int, default=None, help="border crop (default: scale)")
    p.add_argument("--csv", default="", help="write per-image CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lss", help="print the self-similarity of an image")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_lss)

    p = sub.add_parser("params", help="parameter count for a network config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("hqs-demo", help="classical HQS restoration demo")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--scale", type=int, choices=(2, 3, 4), required=True)
    p.add_argument("--iters", type=int, default=8)
    p.add_argument("--history", default="", help="write step,beta,objective CSV here")
    p.set_defaults(func=cmd_hqs_demo)

    p = sub.add_parser("features", help="dump normalized feature maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_features)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except (ConvergenceError, TrainingDiverged) as exc:
        print(f"hsr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError) as exc:
        print(f"hsr: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"hsr: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
