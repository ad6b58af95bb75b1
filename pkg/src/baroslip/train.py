"""Mini-batch Adam training shared by the TCN and the frequency CNN."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, augment, undersample
from .errors import DataError, NumericError
from .nn_core import AdamState, adam_step, cross_entropy

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    epochs: int = 60
    batch_size: int = 256
    lr: float = 0.002
    seed: int = 0
    aug_sigma: float = 0.05
    aug_p: float = 0.25


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, stream]))


def evaluate(model, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if len(y) == 0:
        return float("nan"), float("nan")
    p = model.predict_proba(x)
    return cross_entropy(p, y), float(np.mean(np.argmax(p, axis=1) == y))


def train(model, dataset: Dataset, schedule: Schedule, callback=None) -> list[EpochMetrics]:
    """Train in place; returns one :class:`EpochMetrics` per epoch.

    Every epoch re-draws the class-balanced subset, shuffles it, applies the
    grid-symmetry augmentation plus input noise, then runs Adam over
    mini-batches.  All draws derive from ``schedule.seed``.
    """
    tr = dataset.train
    if len(tr) == 0 or np.all(tr.y == tr.y[0]):
        raise DataError("training set must contain both classes")
    model.set_normalization(dataset.mean, dataset.std)
    state = AdamState(lr=schedule.lr)
    history = []
    for epoch in range(schedule.epochs):
        idx = undersample(tr.y, epoch_rng(schedule.seed, epoch, 0))
        x = augment(tr.x[idx], epoch_rng(schedule.seed, epoch, 1), schedule.aug_sigma, schedule.aug_p)
        y = tr.y[idx]
        drop_rng = epoch_rng(schedule.seed, epoch, 2)
        losses, correct = [], 0
        for b in range(0, len(y), schedule.batch_size):
            xb = model.featurize(x[b:b + schedule.batch_size])
            yb = y[b:b + schedule.batch_size]
            loss, p = model.loss_and_grad(xb, yb, drop_rng)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b // schedule.batch_size}; "
                                   f"max |logit prob| {np.nanmax(np.abs(p)):.3g}")
            adam_step(model.params, state)
            losses.append(loss * len(yb))
            correct += int(np.sum(np.argmax(p, axis=1) == yb))
        val_loss, val_acc = evaluate(model, dataset.val.x, dataset.val.y)
        m = EpochMetrics(epoch, float(np.sum(losses) / len(y)), correct / len(y), val_loss, val_acc)
        history.append(m)
        log.info("epoch %d train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f",
                 epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc)
        if callback is not None:
            callback(m)
    model.trained = True
    return history
