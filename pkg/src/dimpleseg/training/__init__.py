from .config import TrainConfig
from .loop import EpochEvent, EvalResult, TrainReport, evaluate, fit
from .losses import bce_loss, dice_metric, soft_dice_loss, total_loss
from .optim import AdamState, adam_step, lr_at_epoch

__all__ = [
    "TrainConfig", "EpochEvent", "EvalResult", "TrainReport", "evaluate", "fit",
    "bce_loss", "dice_metric", "soft_dice_loss", "total_loss", "AdamState", "adam_step", "lr_at_epoch",
]
