"""Command-line surface: train, eval, ablate, phantom generate."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echofuse",
        description="Multi-view echocardiogram video segmentation with "
        "global/local view fusion and a temporal cycle loss.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config and manifest")
    p_train.add_argument("--config", required=True, help="TOML or JSON training config")
    p_train.add_argument("--data", required=True, help="dataset manifest JSON")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--seed", type=int, default=None, help="override config rng_seed")
    p_train.add_argument("--quiet", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True, help="dataset manifest JSON")
    p_eval.add_argument("--split", default="test")
    p_eval.add_argument("--out", default=None, help="CSV path (defaults to stdout table)")
    p_eval.add_argument("--overlays", default=None, help="directory for overlay PNGs")

    p_ablate = sub.add_parser("ablate", help="run the fusion/cycle ablation suite")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--data", required=True)
    p_ablate.add_argument("--out", required=True)
    p_ablate.add_argument("--seeds", type=int, default=3)

    p_phantom = sub.add_parser("phantom", help="synthetic dataset commands")
    phantom_sub = p_phantom.add_subparsers(dest="phantom_command", required=True)
    p_gen = phantom_sub.add_parser("generate", help="render a phantom dataset")
    p_gen.add_argument("--config", default=None, help="phantom config JSON (defaults built in)")
    p_gen.add_argument("--out", required=True, help="output dataset directory")
    p_gen.add_argument("--seed", type=int, default=None, help="override config rng_seed")

    return parser


def _cmd_train(args) -> int:
    from .config import load_train_config
    from .data import load_manifest
    from .train import train

    config = load_train_config(args.config)
    manifest = load_manifest(args.data)
    report = train(config, manifest, args.out, seed=args.seed, quiet=args.quiet)
    print(
        f"best epoch {report.best_epoch + 1}: validation average Dice "
        f"{report.average_dice:.4f}"
    )
    print(f"checkpoint: {report.checkpoint_path}")
    print(f"report: {Path(args.out) / 'report.json'}")
    return 0


def _cmd_eval(args) -> int:
    from .data import load_manifest
    from .evaluate import evaluate_checkpoint, write_csv

    manifest = load_manifest(args.data)
    result = evaluate_checkpoint(
        args.checkpoint, manifest, args.split, overlay_dir=args.overlays
    )
    if args.out:
        write_csv(result, args.out)
        print(f"wrote {args.out}")
    else:
        for row in result.rows():
            print(
                f"{row['view']:<10} {row['class']:<4} frames {row['frame_count']:<6} "
                f"dice {row['mean_dice']:.4f}"
            )
    print(f"average Dice ({args.split}): {result.average_dice:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    from .ablation import run_ablation_suite
    from .config import load_train_config
    from .data import load_manifest

    config = load_train_config(args.config)
    manifest = load_manifest(args.data)
    report = run_ablation_suite(config, manifest, args.out, seeds=args.seeds)
    print(report.render())
    # directional failures are reported in the analysis text, not the exit code
    return 0


def _cmd_phantom_generate(args) -> int:
    from .phantom import PhantomConfig, generate_dataset, load_phantom_config

    config = load_phantom_config(args.config) if args.config else PhantomConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, rng_seed=args.seed)
    manifest = generate_dataset(config, args.out)
    counts = manifest.split_counts()
    print(
        f"generated {len(manifest.samples)} videos "
        f"({', '.join(f'{k}: {v}' for k, v in sorted(counts.items()))}) in {args.out}"
    )
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        return _cmd_train(args)
    if args.command == "eval":
        return _cmd_eval(args)
    if args.command == "ablate":
        return _cmd_ablate(args)
    if args.command == "phantom":
        return _cmd_phantom_generate(args)
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
