"""Synthetic fractograph stand-ins: dark elliptical dimples on a noisy bright field."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError
from .types import SourceImage


@dataclass(frozen=True)
class SyntheticSpec:
    canvas: int = 128
    n_dimples: tuple[int, int] = (3, 8)  # inclusive range
    radius: tuple[float, float] = (5.0, 14.0)
    background_level: int = 190
    dimple_level: int = 60
    noise_sigma: float = 8.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.n_dimples
        if lo < 0 or hi < lo:
            raise ConfigError(f"invalid n_dimples range {self.n_dimples}")
        if not 0 < self.radius[0] <= self.radius[1]:
            raise ConfigError(f"invalid radius range {self.radius}")
        for level in (self.background_level, self.dimple_level):
            if not 0 <= level <= 255:
                raise ConfigError(f"intensity level {level} outside [0, 255]")
        if self.canvas < 1 or self.noise_sigma < 0:
            raise ConfigError("canvas must be positive and noise_sigma non-negative")


def generate_synthetic_pair(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(image uint8, mask uint8 in {0,1})`` of size canvas x canvas."""
    rng = np.random.default_rng(spec.seed)
    size = spec.canvas
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(spec.n_dimples[0], spec.n_dimples[1] + 1))):
        cy, cx = rng.uniform(0, size, size=2)
        ry, rx = rng.uniform(spec.radius[0], spec.radius[1], size=2)
        theta = rng.uniform(0, np.pi)
        c, s = np.cos(theta), np.sin(theta)
        u = (xx - cx) * c + (yy - cy) * s
        v = -(xx - cx) * s + (yy - cy) * c
        mask |= (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    level = np.where(mask, spec.dimple_level, spec.background_level).astype(np.float64)
    image = level + rng.normal(0.0, spec.noise_sigma, size=(size, size))
    return np.clip(np.rint(image), 0, 255).astype(np.uint8), mask.astype(np.uint8)


def synthetic_corpus(n: int, spec: SyntheticSpec = SyntheticSpec(), prefix: str = "syn") -> list[SourceImage]:
    """``n`` source images with seeds ``spec.seed + i`` and ids ``<prefix>_<i>``."""
    out = []
    for i in range(n):
        image, mask = generate_synthetic_pair(replace(spec, seed=spec.seed + i))
        out.append(SourceImage(f"{prefix}_{i:04d}", image, mask))
    return out
