"""PNG ingest and export, plus the on-disk tile directory layout.

Layout::

    images/<id>.png, masks/<id>.png          source data (masks stored as 0/255)
    <out>/<split>/<id>_<row>_<col>.png       image tile
    <out>/<split>/<id>_<row>_<col>.mask.png  matching mask tile
    <out>/manifest.txt                       one "id,split" line per source image

RGB input is reduced to gray with integer luminance
``(299 R + 587 G + 114 B + 500) // 1000``.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ImageFormatError, ImageIOError, ValidationError
from .types import SPLITS, SourceImage, Tile, TileSet

PathLike = Union[str, os.PathLike]
MASK_SUFFIX = ".mask.png"


def _open(path: PathLike) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(path, "no such file")
    try:
        im = Image.open(path)
        im.load()
    except UnidentifiedImageError:
        raise ImageFormatError(path, "not a readable image") from None
    except OSError as exc:
        raise ImageIOError(path, f"cannot read image ({exc})") from None
    return im


def _to_gray(im: Image.Image, path) -> np.ndarray:
    if im.mode == "L":
        return np.asarray(im, dtype=np.uint8).copy()
    if im.mode in ("1", "LA"):
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    if im.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr"):
        rgb = np.asarray(im.convert("RGB"), dtype=np.int64)
        y = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
        return y.astype(np.uint8)
    raise ImageFormatError(path, f"unsupported image mode {im.mode!r}; expected 8-bit gray or RGB")


def load_grayscale(path: PathLike) -> np.ndarray:
    return _to_gray(_open(path), path)


def load_grayscale_png(path: PathLike, image_id: Optional[str] = None) -> SourceImage:
    path = Path(path)
    return SourceImage(image_id or path.stem, load_grayscale(path))


def load_mask_png(path: PathLike) -> np.ndarray:
    """Read a {0, 255} mask as uint8 {0, 1}; any other value is rejected."""
    raw = load_grayscale(path)
    bad = np.setdiff1d(np.unique(raw), (0, 255))
    if bad.size:
        raise ValidationError(f"{path}: mask contains values {bad[:5].tolist()}; only 0 and 255 are allowed")
    return (raw == 255).astype(np.uint8)


def save_mask_png(mask: np.ndarray, path: PathLike) -> None:
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValidationError("save_mask_png: mask must be binary {0, 1}")
    save_gray_png((mask * 255).astype(np.uint8), path)


def save_gray_png(pixels: np.ndarray, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8), mode="L").save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(path, f"cannot write image ({exc})") from None


def load_source_dir(images_dir: PathLike, masks_dir: Optional[PathLike] = None) -> list[SourceImage]:
    """Load ``images/<id>.png`` (and ``masks/<id>.png``) sorted by id.

    Raises ValidationError listing every image id without a mask.
    """
    paths = sorted(Path(images_dir).glob("*.png"))
    if masks_dir is not None:
        missing = [p.stem for p in paths if not (Path(masks_dir) / p.name).is_file()]
        if missing:
            raise ValidationError(f"missing masks for image ids: {missing}")
    out = []
    for p in paths:
        img = load_grayscale_png(p)
        if masks_dir is not None:
            img = SourceImage(img.id, img.pixels, load_mask_png(Path(masks_dir) / p.name))
        out.append(img)
    return out


def tile_stem(t: Tile) -> str:
    return f"{t.source_id}_{t.row}_{t.col}"


def write_tiles(tiles: TileSet, out_dir: PathLike) -> None:
    out_dir = Path(out_dir)
    for t in tiles.tiles:
        split_dir = out_dir / (t.split or "unassigned")
        save_gray_png(np.rint(t.image * 255.0).astype(np.uint8), split_dir / f"{tile_stem(t)}.png")
        if t.mask is not None:
            save_mask_png(t.mask, split_dir / f"{tile_stem(t)}{MASK_SUFFIX}")


def write_manifest(assignment: dict[str, str], path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{i},{assignment[i]}\n" for i in sorted(assignment)]
    path.write_text("".join(lines))


def read_manifest(path: PathLike) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            image_id, split = line.rsplit(",", 1)
        except ValueError:
            raise ValidationError(f"{path}:{n}: expected 'id,split'") from None
        if split not in SPLITS:
            raise ValidationError(f"{path}:{n}: unknown split {split!r}")
        out[image_id] = split
    return out


def read_tile_split(tiles_dir: PathLike, split: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """``(stem, image float32 [0,1], mask {0,1})`` for every tile of a split, sorted by name."""
    split_dir = Path(tiles_dir) / split
    out = []
    for p in sorted(split_dir.glob("*.png")):
        if p.name.endswith(MASK_SUFFIX):
            continue
        mpath = p.with_name(p.stem + MASK_SUFFIX)
        if not mpath.is_file():
            raise ValidationError(f"tile {p.name} has no mask {mpath.name}")
        image = load_grayscale(p).astype(np.float32) / np.float32(255.0)
        out.append((p.stem, image, load_mask_png(mpath)))
    return out
