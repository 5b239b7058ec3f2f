from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; defaults reproduce the published setup."""

    lambda_dice: float = 1.25
    lambda_bce: float = 0.95
    lr0: float = 1e-4
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_gamma: float = 0.9
    lr_step: int = 10
    epochs: int = 150
    batch_size: int = 1
    dice_smooth: float = 1.0
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lambda_dice <= 0 or self.lambda_bce <= 0:
            raise ConfigError("lambda_dice and lambda_bce must be positive")
        if not 0 < self.beta1 < self.beta2 < 1:
            raise ConfigError(f"need 0 < beta1 < beta2 < 1, got {self.beta1}, {self.beta2}")
        if not 0 < self.lr_gamma <= 1:
            raise ConfigError(f"lr_gamma must lie in (0, 1], got {self.lr_gamma}")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.lr_step < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr_step and batch_size must be >= 1, epochs >= 0")
        if self.lr0 < 0 or self.weight_decay < 0 or self.adam_eps <= 0 or self.dice_smooth < 0:
            raise ConfigError("lr0, weight_decay, dice_smooth must be >= 0 and adam_eps > 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
