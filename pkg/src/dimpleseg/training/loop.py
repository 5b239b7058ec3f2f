"""Epoch loop and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..autodiff import backward
from ..errors import TrainingIntegrityError, ValidationError
from ..models import Model
from .config import TrainConfig
from .losses import dice_metric, total_loss
from .optim import AdamState, adam_step, lr_at_epoch

log = logging.getLogger(__name__)

Pair = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class EpochEvent:
    epoch: int
    lr: float
    train_loss: float
    val_dsc: float


@dataclass
class TrainReport:
    best_epoch: int
    best_val_dsc: float
    events: list[EpochEvent] = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False


@dataclass
class EvalResult:
    mean_dsc: float
    per_image: list[float]

    @property
    def std_dsc(self) -> float:
        return float(np.std(self.per_image)) if self.per_image else float("nan")


# A sink returning True asks the loop to stop after the current epoch.
EventSink = Callable[[EpochEvent], Optional[bool]]


def _stack(pairs: Sequence[Pair], dtype) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([np.asarray(p[0], dtype=dtype) for p in pairs])[:, None]
    y = np.stack([np.asarray(p[1], dtype=dtype) for p in pairs])[:, None]
    return x, y


def evaluate(model: Model, dataset: Sequence[Pair], cfg: TrainConfig = TrainConfig()) -> EvalResult:
    """Mean and per-tile hard dice in eval mode; the model's mode is restored."""
    if len(dataset) == 0:
        raise ValidationError("evaluate: empty dataset")
    scores = []
    for image, mask in dataset:
        prob = model.predict(np.asarray(image, dtype=model.dtype)[None, None])
        scores.append(dice_metric(prob[0, 0], mask, cfg.threshold))
    return EvalResult(float(np.mean(scores)), scores)


def fit(
    model: Model,
    train_set: Sequence[Pair],
    val_set: Sequence[Pair],
    cfg: TrainConfig,
    sink: Optional[EventSink] = None,
) -> TrainReport:
    """Train with Adam and the step LR schedule; keep the best-val-DSC weights.

    Batches follow a per-epoch permutation drawn from a generator seeded with
    ``cfg.seed``. When ``val_set`` is empty the final weights are kept.
    """
    if len(train_set) == 0:
        raise ValidationError("fit: empty training set")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    report = TrainReport(best_epoch=-1, best_val_dsc=-math.inf)
    best_state = None
    n = len(train_set)

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        order = rng.permutation(n)
        model.train()
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x, y = _stack([train_set[i] for i in idx], model.dtype)
            model.params.zero_grad()
            loss = total_loss(model(x), y, cfg.lambda_dice, cfg.lambda_bce, cfg.dice_smooth)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingIntegrityError(f"non-finite loss {value} at epoch {epoch}, batch {b}")
            backward(loss)
            adam_step(model.params, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
            report.steps += 1
            losses.append(value)

        val_dsc = evaluate(model, val_set, cfg).mean_dsc if len(val_set) else float("nan")
        event = EpochEvent(epoch, lr, float(np.mean(losses)), val_dsc)
        report.events.append(event)
        log.info("epoch %d lr %.3g loss %.5f val_dsc %.5f", epoch, lr, event.train_loss, val_dsc)
        if len(val_set) and val_dsc > report.best_val_dsc:
            report.best_val_dsc, report.best_epoch = val_dsc, epoch
            best_state = model.params.state()
        if sink is not None and sink(event):
            report.stopped_early = True
            break

    model.params.zero_grad()
    if best_state is not None:
        for name, value in best_state.items():
            model.params[name].data[...] = value
    elif report.events:
        report.best_epoch = report.events[-1].epoch
        report.best_val_dsc = report.events[-1].val_dsc
    model.eval()
    return report
