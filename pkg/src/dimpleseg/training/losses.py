"""Segmentation losses and the dice score.

The training objective is ``lambda_dice * (1 - soft_dice) + lambda_bce * bce``
on sigmoid probabilities.
"""

from __future__ import annotations

from typing import Union

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ValidationError

BCE_EPS = 1e-7
LAMBDA_DICE = 1.25
LAMBDA_BCE = 0.95

ArrayLike = Union[Tensor, np.ndarray]


def _target(target: ArrayLike, like: Tensor) -> Tensor:
    data = target.data if isinstance(target, Tensor) else np.asarray(target)
    if data.shape != like.shape:
        raise ValidationError(f"target shape {data.shape} does not match prediction {like.shape}")
    if not np.isin(data, (0, 1)).all():
        raise ValidationError("target must be binary (values in {0, 1})")
    return Tensor(data.astype(like.dtype, copy=False))


def soft_dice_loss(pred: Tensor, target: ArrayLike, smooth: float = 1.0) -> Tensor:
    """Soft dice similarity over the whole batch (1.0 is perfect overlap).

    Despite the name this returns the similarity; the loss term is
    ``1 - soft_dice_loss(...)`` as composed in :func:`total_loss`.
    """
    y = _target(target, pred)
    inter = ops.sum(ops.mul(pred, y))
    denom = ops.sum(pred) + float(y.data.sum()) + smooth
    return (2.0 * inter + smooth) / denom


def bce_loss(pred: Tensor, target: ArrayLike, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    y = _target(target, pred)
    p = ops.clip(pred, eps, 1.0 - eps)
    ll = ops.mul(y, ops.log(p)) + ops.mul(1.0 - y.data, ops.log(1.0 - p))
    return -ops.mean(ll)


def total_loss(
    pred: Tensor,
    target: ArrayLike,
    lambda_dice: float = LAMBDA_DICE,
    lambda_bce: float = LAMBDA_BCE,
    smooth: float = 1.0,
) -> Tensor:
    dice = soft_dice_loss(pred, target, smooth)
    return lambda_dice * (1.0 - dice) + lambda_bce * bce_loss(pred, target)


def dice_metric(pred: ArrayLike, target: ArrayLike, threshold: float = 0.5) -> float:
    """Hard dice score ``2|A & B| / (|A| + |B|)`` after binarizing ``pred >= threshold``.

    Two empty masks score 1.0.
    """
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    a = p >= threshold
    b = t > 0.5
    size = int(a.sum()) + int(b.sum())
    if size == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / size
