"""Command-line entry point: ``dimpleseg {synth,tile,train,eval,predict}``.

Exit codes: 0 success, 1 runtime failure (NaN loss, I/O), 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_run_config
from .errors import (
    CheckpointError,
    ConfigError,
    DimpleSegError,
    GeometryError,
    ImageFormatError,
    ImageIOError,
    TrainingIntegrityError,
    ValidationError,
)
from .models import ARCHS, build_model
from .training import EpochEvent, evaluate, fit

log = logging.getLogger("dimpleseg")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
LOG_HEADER = ("epoch", "lr", "train_loss", "val_dsc")


class UsageError(DimpleSegError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = data.SyntheticSpec(canvas=args.size, seed=args.seed)
    out = Path(args.out)
    for img in data.synthetic_corpus(args.n, spec):
        data.save_gray_png(img.pixels, out / "images" / f"{img.id}.png")
        data.save_mask_png(img.mask, out / "masks" / f"{img.id}.png")
    print(f"wrote {args.n} synthetic image/mask pairs to {out}")
    return EXIT_OK


def cmd_tile(args) -> int:
    images_dir = Path(args.images)
    if not images_dir.is_dir() or not any(images_dir.glob("*.png")):
        raise UsageError(f"no PNG images found in {images_dir}")
    if args.masks and not Path(args.masks).is_dir():
        raise UsageError(f"mask directory {args.masks} does not exist")
    try:
        images = data.load_source_dir(images_dir, args.masks)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    assignment = data.split_dataset(images, seed=args.seed)
    tiles = data.tile_dataset(images, assignment, args.tile)
    out = Path(args.out)
    data.write_tiles(tiles, out)
    data.write_manifest(assignment, out / "manifest.txt")
    counts = {s: len(tiles.split(s)) for s in data.SPLITS}
    print(f"tiles: train={counts['train']} val={counts['val']} test={counts['test']} "
          f"from {len(images)} images")
    return EXIT_OK


def _synthetic_sets(n: int, tile: int, seed: int):
    corpus = data.synthetic_corpus(n, data.SyntheticSpec(canvas=tile, seed=seed))
    assignment = data.split_dataset(corpus, seed=seed)
    tiles = data.tile_dataset(corpus, assignment, tile)
    return tiles.pairs("train"), tiles.pairs("val")


def _tile_sets(tiles_dir: str):
    train = [(im, m) for _, im, m in data.read_tile_split(tiles_dir, "train")]
    val = [(im, m) for _, im, m in data.read_tile_split(tiles_dir, "val")]
    return train, val


def cmd_train(args) -> int:
    overrides = {
        "arch": args.arch, "out": args.out, "log": args.log, "epochs": args.epochs,
        "base_width": args.base_width, "seed": args.seed, "synthetic": args.synthetic,
        "tiles_dir": args.tiles, "lr0": args.lr,
    }
    cfg = load_run_config(args.config, overrides)
    tcfg, spec = cfg.train, cfg.model
    if cfg["synthetic"] > 0:
        train_set, val_set = _synthetic_sets(cfg["synthetic"], cfg["tile"], tcfg.seed)
    elif cfg["tiles_dir"]:
        train_set, val_set = _tile_sets(cfg["tiles_dir"])
    else:
        raise UsageError("train needs --tiles DIR (or tiles_dir in the config) or --synthetic N")
    if not train_set:
        raise UsageError("training split is empty")
    if tcfg.epochs and not val_set:
        log.warning("validation split is empty; keeping final weights")

    model = build_model(spec, seed=tcfg.seed)
    model.check_geometry((1, spec.in_channels) + train_set[0][0].shape)

    log_path = Path(cfg["log"])
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with log_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)

        def sink(e: EpochEvent) -> None:
            writer.writerow((e.epoch, _fmt(e.lr), _fmt(e.train_loss), _fmt(e.val_dsc)))
            fh.flush()

        report = fit(model, train_set, val_set, tcfg, sink)
    save_checkpoint(model, cfg["out"])
    print(f"trained {spec.arch} for {len(report.events)} epochs ({report.steps} steps); "
          f"best val DSC {report.best_val_dsc:.5f} at epoch {report.best_epoch}; checkpoint {cfg['out']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    tiles = data.read_tile_split(args.tiles, args.split)
    if not tiles:
        raise UsageError(f"split {args.split!r} under {args.tiles} has no tiles")
    model.check_geometry((1, model.spec.in_channels) + tiles[0][1].shape)
    result = evaluate(model, [(im, m) for _, im, m in tiles])
    report = Path(args.report) if args.report else Path(args.ckpt).with_suffix(f".{args.split}.csv")
    report.parent.mkdir(parents=True, exist_ok=True)
    with report.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("tile", "dsc"))
        for (stem, _, _), score in zip(tiles, result.per_image):
            writer.writerow((stem, _fmt(score)))
    print(f"{args.split}: mean DSC {result.mean_dsc:.5f} ± {result.std_dsc:.5f} "
          f"(per-tile std, n={len(result.per_image)}); per-tile scores in {report}")
    return EXIT_OK


def predict_mask(model, img: data.SourceImage, tile: int = data.TILE, threshold: float = 0.5) -> np.ndarray:
    """Tile, run the model in eval mode, threshold and stitch back to full size."""
    tiles = data.tile_image(img, tile)
    preds = []
    for t in tiles:
        prob = model.predict(t.image[None, None].astype(model.dtype))[0, 0]
        preds.append(((prob >= threshold).astype(np.uint8), t.row, t.col))
    return data.stitch_tiles(preds, tiles[0].pad)


def cmd_predict(args) -> int:
    model = load_checkpoint(args.ckpt)
    img = data.load_grayscale_png(args.image)
    model.check_geometry((1, model.spec.in_channels, args.tile, args.tile))
    mask = predict_mask(model, img, args.tile, args.threshold)
    data.save_mask_png(mask, args.out)
    print(f"wrote {mask.shape[1]}x{mask.shape[0]} mask to {args.out} ({int(mask.sum())} dimple pixels)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dimpleseg", description="Dimple segmentation for SEM fractographs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic images/ and masks/ directories")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tile", help="cut images and masks into tiles with a 70/20/10 split")
    p.add_argument("--images", required=True)
    p.add_argument("--masks")
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=data.TILE)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus CSV log")
    p.add_argument("--config")
    p.add_argument("--arch", choices=ARCHS)
    p.add_argument("--tiles", help="tile directory written by 'tile'")
    p.add_argument("--synthetic", type=int, help="train on N generated pairs instead of tiles")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="CSV log path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--base-width", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="dice score of a checkpoint on one tile split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tiles", required=True)
    p.add_argument("--split", choices=data.SPLITS, default="test")
    p.add_argument("--report", help="per-tile CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment a whole image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=data.TILE)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, GeometryError, ValidationError, CheckpointError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingIntegrityError, ImageIOError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
