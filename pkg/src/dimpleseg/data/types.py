from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ValidationError

SPLITS = ("train", "val", "test")


@dataclass
class SourceImage:
    """A grayscale uint8 image with an optional binary {0,1} mask."""

    id: str
    pixels: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ValidationError(f"{self.id}: image must be 2-D grayscale, got shape {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            if self.pixels.min() < 0 or self.pixels.max() > 255:
                raise ValidationError(f"{self.id}: pixel values outside [0, 255]")
            self.pixels = self.pixels.astype(np.uint8)
        if self.mask is not None:
            self.mask = np.asarray(self.mask)
            if self.mask.shape != self.pixels.shape:
                raise ValidationError(f"{self.id}: mask shape {self.mask.shape} != image shape {self.pixels.shape}")
            if not np.isin(self.mask, (0, 1)).all():
                raise ValidationError(f"{self.id}: mask values must be 0 or 1")
            self.mask = self.mask.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PadInfo:
    """Geometry needed to invert tiling: original size and reflect padding added."""

    height: int
    width: int
    pad_bottom: int
    pad_right: int
    tile: int


@dataclass
class Tile:
    image: np.ndarray  # float32 in [0, 1]
    mask: Optional[np.ndarray]  # uint8 {0, 1}
    source_id: str
    row: int
    col: int
    pad: PadInfo
    split: Optional[str] = None


@dataclass
class TileSet:
    tiles: list[Tile] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tiles)

    def split(self, name: str) -> list[Tile]:
        return [t for t in self.tiles if t.split == name]

    def pairs(self, name: Optional[str] = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """``(image, mask)`` pairs for training, optionally restricted to one split."""
        chosen = self.tiles if name is None else self.split(name)
        return [(t.image, t.mask) for t in chosen if t.mask is not None]
