"""Adam with coupled L2 weight decay, and the step-exponential LR schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingIntegrityError
from ..nn import ParamStore
from .config import TrainConfig


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: ParamStore,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected Adam update of every trainable entry, in place.

    Weight decay is folded into the gradient (``g + wd * theta``) before the
    moment updates. Buffers are never touched.
    """
    trainable = list(params.trainable())
    missing = [name for name, t in trainable if t.grad is None]
    if missing:
        raise TrainingIntegrityError(f"no gradient for trainable parameters: {missing[:5]}"
                                     + (" ..." if len(missing) > 5 else ""))
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, t in trainable:
        g = t.grad
        if weight_decay:
            g = g + weight_decay * t.data
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        denom = np.sqrt(v / bc2) + eps
        t.data -= (lr / bc1) * m / denom


def lr_at_epoch(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    """``lr0 * gamma ** floor(epoch / lr_step)``."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * math.pow(cfg.lr_gamma, epoch // cfg.lr_step)
