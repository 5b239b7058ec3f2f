"""Cutting source images into fixed-size tiles and stitching predictions back."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from ..errors import ConfigError, IncompleteGridError, ValidationError
from .types import PadInfo, SourceImage, Tile, TileSet

TILE = 128


def _padded_extent(n: int, tile: int, stride: int) -> int:
    if n <= tile:
        return tile
    return (math.ceil((n - tile) / stride)) * stride + tile


def tile_image(img: SourceImage, tile: int = TILE, overlap: int = 0) -> list[Tile]:
    """Cut ``img`` into ``tile`` x ``tile`` patches on a row-major grid.

    The right and bottom edges are reflect-padded up to the next full tile;
    the padding is recorded in each tile's :class:`PadInfo`. Pixels are scaled
    to [0, 1] by 1/255.
    """
    if tile < 1 or overlap < 0 or tile <= overlap:
        raise ConfigError(f"tile size {tile} must exceed overlap {overlap}")
    stride = tile - overlap
    H, W = img.height, img.width
    Hp, Wp = _padded_extent(H, tile, stride), _padded_extent(W, tile, stride)
    pad = PadInfo(H, W, Hp - H, Wp - W, tile)
    widths = ((0, Hp - H), (0, Wp - W))
    pixels = np.pad(img.pixels, widths, mode="reflect") if (Hp > H or Wp > W) else img.pixels
    mask = None
    if img.mask is not None:
        mask = np.pad(img.mask, widths, mode="reflect") if (Hp > H or Wp > W) else img.mask
    tiles = []
    for r in range(0, Hp - tile + 1, stride):
        for c in range(0, Wp - tile + 1, stride):
            patch = pixels[r:r + tile, c:c + tile].astype(np.float32) / np.float32(255.0)
            mpatch = None if mask is None else mask[r:r + tile, c:c + tile].copy()
            tiles.append(Tile(patch, mpatch, img.id, r, c, pad))
    return tiles


def tile_count(height: int, width: int, tile: int = TILE) -> int:
    """Tiles produced at zero overlap: ``ceil(H / tile) * ceil(W / tile)``."""
    return math.ceil(height / tile) * math.ceil(width / tile)


def stitch_tiles(preds: Iterable[tuple[np.ndarray, int, int]], pad: PadInfo, overlap: int = 0) -> np.ndarray:
    """Reassemble ``(tile, row, col)`` patches and crop to the original size."""
    if overlap:
        raise ConfigError("stitching overlapping tiles is not supported")
    t = pad.tile
    Hp, Wp = pad.height + pad.pad_bottom, pad.width + pad.pad_right
    expected = {(r, c) for r in range(0, Hp, t) for c in range(0, Wp, t)}
    canvas = None
    seen = set()
    for patch, r, c in preds:
        patch = np.asarray(patch)
        if (r, c) not in expected:
            raise ValidationError(f"tile at ({r}, {c}) is off the {Hp}x{Wp} grid")
        if patch.shape != (t, t):
            raise ValidationError(f"tile at ({r}, {c}) has shape {patch.shape}, expected {(t, t)}")
        if canvas is None:
            canvas = np.zeros((Hp, Wp), dtype=patch.dtype)
        canvas[r:r + t, c:c + t] = patch
        seen.add((r, c))
    missing = expected - seen
    if missing or canvas is None:
        raise IncompleteGridError(missing or expected)
    return canvas[:pad.height, :pad.width]


def tile_dataset(images: Sequence[SourceImage], assignment: dict[str, str], tile: int = TILE) -> TileSet:
    """Tile every image in id order; each tile inherits its source's split label."""
    out = TileSet()
    for img in sorted(images, key=lambda im: im.id):
        split = assignment[img.id]
        for t in tile_image(img, tile):
            t.split = split
            out.tiles.append(t)
    return out
