from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np

from ..errors import ConfigError
from .types import SPLITS, SourceImage

FRACTIONS = (0.70, 0.20, 0.10)


def _round_half_up(x: float) -> int:
    # round(.., 9) absorbs float noise such as 0.7 + 0.2 = 0.8999999999999999
    return int(math.floor(round(x, 9) + 0.5))


def split_dataset(
    images: Sequence[Union[SourceImage, str]],
    fractions: tuple[float, float, float] = FRACTIONS,
    seed: int = 0,
) -> dict[str, str]:
    """Assign each source image (not tile) to train/val/test.

    Ids are sorted, shuffled with ``seed``, then cut at
    ``round(f_train * n)`` and ``round((f_train + f_val) * n)``, halves rounding up.
    """
    ids = sorted(im.id if isinstance(im, SourceImage) else str(im) for im in images)
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate source image ids")
    if len(ids) < len(SPLITS):
        raise ConfigError(f"need at least {len(SPLITS)} images to split, got {len(ids)}")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    n = len(ids)
    cut1 = _round_half_up(fractions[0] * n)
    cut2 = _round_half_up((fractions[0] + fractions[1]) * n)
    order = np.random.default_rng(seed).permutation(n)
    assignment = {}
    for pos, i in enumerate(order):
        assignment[ids[i]] = "train" if pos < cut1 else ("val" if pos < cut2 else "test")
    return assignment


def split_counts(assignment: dict[str, str]) -> dict[str, int]:
    return {s: sum(1 for v in assignment.values() if v == s) for s in SPLITS}
