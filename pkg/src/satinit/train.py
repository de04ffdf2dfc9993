"""Mini-batch SGD training with per-epoch metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import ParamSet, backward, forward, loss, predict_batch, sgd_step

INIT_KINDS = ("random", "smt", "zero")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")


@dataclass(frozen=True)
class EpochMetrics:
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class RunRecord:
    init_kind: str
    arch: str
    config: TrainConfig
    initial: EpochMetrics
    epochs: list[EpochMetrics] = field(default_factory=list)
    smt_inputs: int | None = None
    solver_elapsed: float | None = None
    init_seed: int | None = None
    encoded_acc0: float | None = None  # accuracy on the SMT-encoded samples before training

    def __post_init__(self):
        if self.init_kind not in INIT_KINDS:
            raise ValueError(f"unknown init kind {self.init_kind!r}")

    @property
    def final(self) -> EpochMetrics:
        return self.epochs[-1] if self.epochs else self.initial


def accuracy(params: ParamSet, xs, ys) -> float:
    if len(ys) == 0:
        return float("nan")
    return float(np.mean(predict_batch(forward(params, xs)) == np.asarray(ys)))


def evaluate(params: ParamSet, train_xy, val_xy) -> EpochMetrics:
    (xt, yt), (xv, yv) = train_xy, val_xy
    return EpochMetrics(loss(params, xt, yt), accuracy(params, xt, yt),
                        loss(params, xv, yv) if len(yv) else float("nan"), accuracy(params, xv, yv))


def train(params: ParamSet, train_xy, val_xy, config: TrainConfig, on_epoch=None):
    """Run SGD; returns the trained params, initial metrics and per-epoch metrics.

    ``on_epoch(epoch, params)`` is called after every epoch, which the tests
    use to watch the hidden layers.
    """
    xt, yt = np.asarray(train_xy[0], dtype=np.float64), np.asarray(train_xy[1])
    params = params.to_float()
    rng = np.random.default_rng(config.seed)
    initial = evaluate(params, (xt, yt), val_xy)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(yt))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            params = sgd_step(params, backward(params, xt[idx], yt[idx]), config.learning_rate)
        history.append(evaluate(params, (xt, yt), val_xy))
        if on_epoch is not None:
            on_epoch(epoch, params)
    return params, initial, history
