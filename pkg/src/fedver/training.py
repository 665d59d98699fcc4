"""Local training: mini-batch SGD with momentum, weight decay and a log-decaying learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from ._seeding import derive_seed, make_rng
from .data import ConfigurationError
from .nn import Autoencoder, MlpVerifier, init_params
from .params import ParamVector

Model = Union[MlpVerifier, Autoencoder]
# (features, labels) for the verifier; a bare feature array for the autoencoder.
TrainingData = Union[tuple, np.ndarray]


@dataclass(frozen=True)
class OptimizerConfig:
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_initial: float = 1e-2
    lr_final: float = 1e-8
    epochs: int = 100
    batch_size: int = 64
    patience: int = 10
    class_balanced: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum", "must satisfy 0 <= momentum < 1")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay", "must be >= 0")
        if not (self.lr_initial > 0 and self.lr_final > 0):
            raise ConfigurationError("lr_initial", "learning rates must be > 0")
        if self.lr_final > self.lr_initial:
            raise ConfigurationError("lr_final", "must not exceed lr_initial")
        if self.epochs < 1:
            raise ConfigurationError("epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size", "must be >= 1")
        if self.patience < 1:
            raise ConfigurationError("patience", "must be >= 1")


@dataclass(frozen=True)
class TrainReport:
    epochs_run: int
    final_train_loss: float
    final_validation_loss: float
    loss_trace: tuple[float, ...] = ()
    validation_trace: tuple[float, ...] = ()
    best_epoch: int = 0


def learning_rate(opt: OptimizerConfig, epoch: int) -> float:
    """Geometric interpolation from ``lr_initial`` (first epoch) to ``lr_final`` (last epoch)."""
    last = opt.epochs - 1
    if epoch <= 0 or last == 0:
        return opt.lr_initial
    if epoch >= last:
        return opt.lr_final
    return opt.lr_initial * (opt.lr_final / opt.lr_initial) ** (epoch / last)


def _unpack(data: TrainingData | None) -> tuple[np.ndarray, np.ndarray | None]:
    if data is None:
        return np.empty((0, 0)), None
    if isinstance(data, tuple):
        x, y = data
        return np.atleast_2d(np.asarray(x, dtype=np.float64)), np.asarray(y, dtype=np.float64)
    return np.atleast_2d(np.asarray(data, dtype=np.float64)), None


def train_local(
    model: Model,
    train_data: TrainingData,
    validation_data: TrainingData | None = None,
    opt: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
) -> tuple[ParamVector, TrainReport]:
    """Train from ``model.params`` and return the best-validation parameters.

    Batches are reshuffled every epoch from a stream derived from
    ``(seed, epoch)``.  Without validation data the training loss drives
    early stopping.
    """
    x, y = _unpack(train_data)
    if x.shape[0] == 0 or x.size == 0:
        raise ValueError("training data is empty")
    xv, yv = _unpack(validation_data)
    has_val = xv.size > 0

    def objective(values, xs, ys):
        return model.objective(values, xs, ys, opt.weight_decay, opt.class_balanced)

    def full_loss(values, xs, ys):
        return objective(values, xs, ys)[0]

    values = np.array(model.params.values)
    velocity = np.zeros_like(values)
    n = x.shape[0]
    best_values = values
    best_loss = math.inf
    best_epoch = 0
    since_best = 0
    train_trace: list[float] = []
    val_trace: list[float] = []
    for epoch in range(opt.epochs):
        lr = learning_rate(opt, epoch)
        order = make_rng(seed, "epoch", epoch).permutation(n)
        for start in range(0, n, opt.batch_size):
            idx = order[start : start + opt.batch_size]
            _, grad = objective(values, x[idx], None if y is None else y[idx])
            velocity = opt.momentum * velocity + grad
            values = values - lr * velocity
        if not np.all(np.isfinite(values)):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        train_loss = full_loss(values, x, y)
        val_loss = full_loss(values, xv, yv) if has_val else train_loss
        train_trace.append(train_loss)
        val_trace.append(val_loss)
        if val_loss < best_loss:
            best_loss, best_values, best_epoch, since_best = val_loss, values, epoch, 0
        else:
            since_best += 1
            if since_best >= opt.patience:
                break
    report = TrainReport(
        epochs_run=len(train_trace),
        final_train_loss=train_trace[best_epoch],
        final_validation_loss=val_trace[best_epoch],
        loss_trace=tuple(train_trace),
        validation_trace=tuple(val_trace),
        best_epoch=best_epoch,
    )
    return model.params.with_values(best_values), report


def train_from_scratch(
    model: Model,
    train_data: TrainingData,
    validation_data: TrainingData | None,
    opt: OptimizerConfig,
    seed: int,
) -> tuple[ParamVector, TrainReport]:
    """Initialize from ``derive_seed(seed, "init")`` then train with ``derive_seed(seed, "train")``."""
    start = init_params(model.layout, "uniform_scaled", derive_seed(seed, "init"))
    return train_local(model.with_params(start), train_data, validation_data, opt, derive_seed(seed, "train"))
