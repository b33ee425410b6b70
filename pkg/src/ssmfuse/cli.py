"""Command-line surface: fuse, train, metrics, gradcheck, flops, ablate.

Every subcommand is deterministic given its flags and seed; emitted tables
are tab-delimited with a header row, and nothing is written outside the
given --out / --out-dir.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .flops import flops_report
from .imageio import FormatError, luminance, read_image, write_image
from .metrics import metrics_report
from .model import (ABLATION_VARIANTS, ConfigError, ModelConfig,
                    ablation_config, build_model, fuse)
from .train import (IntegrityError, TrainSettings, TrainingAborted,
                    history_log, load_checkpoint, save_checkpoint, train)


def _read_gray(path) -> np.ndarray:
    img = read_image(path)
    return luminance(img) if img.ndim == 3 else img


def _read_color(path) -> np.ndarray:
    img = read_image(path)
    return np.stack([img] * 3, axis=-1) if img.ndim == 2 else img


def _pair_stems(*dirs):
    """File stems present in every directory, sorted."""
    def stems(d):
        return {os.path.splitext(f)[0]: os.path.join(d, f)
                for f in sorted(os.listdir(d))
                if f.lower().endswith((".pgm", ".ppm"))}
    tables = [stems(d) for d in dirs]
    common = sorted(set.intersection(*(set(t) for t in tables)))
    if not common:
        raise FileNotFoundError(f"no matching image stems across {dirs}")
    return [(s, *(t[s] for t in tables)) for s in common]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(ModelConfig):
        parser.add_argument(f"--{f.name}", default=None, metavar="V")


def _config_from_args(args) -> ModelConfig:
    overrides = {f.name: getattr(args, f.name)
                 for f in dataclasses.fields(ModelConfig)
                 if getattr(args, f.name, None) is not None}
    if getattr(args, "config", None):
        return ModelConfig.load(args.config, overrides)
    return ModelConfig.from_mapping(overrides)


def cmd_fuse(args) -> int:
    ir = _read_gray(args.ir)
    vi = _read_color(args.vi)
    model, _ = load_checkpoint(args.checkpoint)
    out = fuse(model, ir, vi)
    write_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    pairs = _pair_stems(os.path.join(args.data_dir, "ir"),
                        os.path.join(args.data_dir, "vi"))
    dataset = [(_read_gray(ir_path), _read_color(vi_path))
               for _, ir_path, vi_path in pairs]
    model = build_model(config)
    settings = TrainSettings(lr=args.lr, batch_size=args.batch,
                             epochs=1, crop=args.crop)
    os.makedirs(args.out_dir, exist_ok=True)
    history = []
    state = None
    for epoch in range(args.epochs):
        epoch_hist, state = train(model, dataset, settings, state=state)
        history += epoch_hist
        if args.save_every and (epoch + 1) % args.save_every == 0:
            save_checkpoint(model, state, os.path.join(
                args.out_dir, f"model_step{state.step:06d}.ckpt"))
    log_path = os.path.join(args.out_dir, "loss_log.tsv")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(history_log(history))
    ckpt_path = os.path.join(args.out_dir, "model.ckpt")
    save_checkpoint(model, state, ckpt_path)
    print(f"trained {len(history)} steps; wrote {log_path} and {ckpt_path}")
    return 0


def cmd_metrics(args) -> int:
    triples = _pair_stems(args.fused_dir, args.ir_dir, args.vi_dir)
    rows = []
    names = []
    for stem, fused_path, ir_path, vi_path in triples:
        rows.append((_read_gray(fused_path), _read_gray(ir_path),
                     _read_gray(vi_path)))
        names.append(stem)
    text = metrics_report(rows, names)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import run_gradient_suite
    results = run_gradient_suite(report=print)
    failed = [r for r in results if not r.passed]
    total = sum(r.seconds for r in results)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed "
          f"in {total:.0f}s (tolerance 1e-4)")
    return 1 if failed else 0


def cmd_flops(args) -> int:
    config = _config_from_args(args)
    shape = tuple(int(v) for v in args.shape.split(","))
    sys.stdout.write(flops_report(config, shape))
    return 0


def _synthetic_pair(size: int = 32):
    i, j = np.indices((size, size))
    y = np.clip(0.25 + 0.6 * np.exp(-((i - size / 2) ** 2 + (j - size / 2) ** 2)
                                    / (size * 1.9)) + 0.15 * np.sin(j / 4.0), 0, 1)
    return y, np.stack([y, y, y], axis=-1)


def cmd_ablate(args) -> int:
    base = _config_from_args(args)
    config = ablation_config(base, args.variant)
    model = build_model(config)
    ir, vi = _synthetic_pair()
    settings = TrainSettings(lr=args.lr, batch_size=1, epochs=args.steps, crop=None)
    history, _ = train(model, [(ir, vi)], settings)
    print("variant\tparams\tsteps\ttotal\tssim\ttext\tint")
    last = history[-1]
    print(f"{args.variant}\t{model.param_count()}\t{last[0]}"
          f"\t{last[1]:.6f}\t{last[2]:.6f}\t{last[3]:.6f}\t{last[4]:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmfuse",
        description="difference-driven channel-spatial state space image fusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse one infrared/visible pair")
    p.add_argument("--ir", required=True)
    p.add_argument("--vi", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train", help="train on a directory of pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--lr", type=float, default=2.0e-5)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--save-every", type=int, default=0, metavar="EPOCHS",
                   help="also write a checkpoint every N epochs")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("metrics", help="fusion quality table for a directory")
    p.add_argument("--fused-dir", required=True)
    p.add_argument("--ir-dir", required=True)
    p.add_argument("--vi-dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("flops", help="analytic FLOP table")
    p.add_argument("--config", default=None)
    p.add_argument("--shape", default="1,1,512,512", metavar="B,C,H,W")
    _add_config_flags(p)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("ablate", help="short training run for a named variant")
    p.add_argument("--variant", required=True, choices=sorted(ABLATION_VARIANTS))
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--config", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FormatError, ConfigError, IntegrityError, TrainingAborted,
            FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
