from .io import (
    load_grayscale_png,
    load_mask_png,
    load_source_dir,
    read_manifest,
    read_tile_split,
    save_gray_png,
    save_mask_png,
    write_manifest,
    write_tiles,
)
from .split import FRACTIONS, split_counts, split_dataset
from .synthetic import SyntheticSpec, generate_synthetic_pair, synthetic_corpus
from .tiling import TILE, stitch_tiles, tile_count, tile_dataset, tile_image
from .types import SPLITS, PadInfo, SourceImage, Tile, TileSet

__all__ = [
    "SourceImage", "Tile", "TileSet", "PadInfo", "SPLITS", "SyntheticSpec", "generate_synthetic_pair",
    "synthetic_corpus", "tile_image", "tile_count", "tile_dataset", "stitch_tiles", "TILE",
    "split_dataset", "split_counts", "FRACTIONS", "load_grayscale_png", "load_mask_png",
    "load_source_dir", "save_gray_png", "save_mask_png", "write_tiles", "write_manifest",
    "read_manifest", "read_tile_split",
]
