"""Command line: build slice datasets, train the artifact net, export priors."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from .dataset import TrainingPairSet, build_dataset
from .infer import infer_prior_file
from .train import TrainerConfig, load_checkpoint, save_checkpoint, train


def cmd_dataset(args) -> int:
    pairs = build_dataset(args.corpus_dir, args.scenario)
    pairs.save(args.output)
    print(f"wrote {len(pairs)} slice pairs to {args.output}")
    return 0


def cmd_train(args) -> int:
    pairs = TrainingPairSet.load(args.pairs)
    cfg = TrainerConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        lr_decay_per_epoch=args.lr_decay,
        weight_penalty=args.weight_penalty,
        batch_size=args.batch_size,
        base_channels=args.base_channels,
        val_fraction=args.val_fraction,
        seed=args.seed,
    )
    result = train(pairs, cfg)
    save_checkpoint(args.output, result, cfg)
    if args.loss_curve:
        with open(args.loss_curve, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tr, va) in enumerate(zip(result.train_loss, result.val_loss), start=1):
                writer.writerow([i, tr, va])
    print(
        f"trained {cfg.epochs} epochs; best validation loss {min(result.val_loss):.3e} "
        f"at epoch {result.best_epoch + 1}; wrote {args.output}"
    )
    return 0


def cmd_infer(args) -> int:
    model, norm_scale = load_checkpoint(args.model)
    infer_prior_file(model, args.input, args.output, norm_scale)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dctomo-trainer",
        description="Learn artifact images from paired reconstructions and export prior volumes",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="collect slice pairs from a corpus of phantom directories")
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--scenario", required=True, choices=["truncation", "limited_angle", "sparse_view"])
    p.add_argument("--output", required=True, help="output .npz pair set")
    p.set_defaults(fn=cmd_dataset)

    p = sub.add_parser("train", help="fit the artifact U-Net on a pair set")
    p.add_argument("--pairs", required=True)
    p.add_argument("--output", required=True, help="checkpoint path (.pt)")
    p.add_argument("--loss-curve", help="optional CSV with per-epoch losses")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--lr-decay", type=float, default=0.97)
    p.add_argument("--weight-penalty", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="export a prior volume from a corrupted volume file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_infer)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
