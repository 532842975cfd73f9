"""Minibatch SGD for toy networks, using the analytic CADC/vConv gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ShapeError
from .netspec import NetSpec
from .network import Network, accuracy, init_weights, softmax_xent
from .partition import CrossbarConfig


@dataclass
class TrainParams:
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    weight_decay: float = 0.0

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainParams":
        d = dict(d or {})
        return cls(**{k: type(getattr(cls, k))(v) for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class TrainResult:
    weights: dict
    train_accuracy: list = field(default_factory=list)  # running accuracy per epoch
    loss: list = field(default_factory=list)
    final_accuracy: float = 0.0


def train_toy(netspec: NetSpec, x: np.ndarray, y: np.ndarray, xbar: CrossbarConfig,
              params: TrainParams | None = None, seed: int = 0, weights: dict | None = None) -> TrainResult:
    """Train from ``init_weights(seed)``; fully deterministic given ``seed``.

    ``final_accuracy`` is measured on the whole training set after the last
    epoch; the per-epoch curve is the running minibatch accuracy.
    """
    params = params or TrainParams()
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ShapeError("training set needs at least two classes")
    if len(x) != len(y):
        raise ShapeError(f"{len(x)} inputs but {len(y)} labels")
    weights = {k: v.copy() for k, v in (weights or init_weights(netspec, seed)).items()}
    net = Network(netspec, weights, xbar)
    velocity = {k: np.zeros_like(v) for k, v in weights.items()}
    rng = np.random.default_rng(seed + 1)
    result = TrainResult(weights)
    n = len(x)
    for epoch in range(params.epochs):
        order = rng.permutation(n)
        correct = 0
        total_loss = 0.0
        for start in range(0, n, params.batch_size):
            idx = order[start : start + params.batch_size]
            logits, traces = net.forward(x[idx])
            loss, g = softmax_xent(logits, y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
            grads = net.backward(traces, g)
            for k, gk in grads.items():
                if params.weight_decay:
                    gk = gk + params.weight_decay * weights[k]
                velocity[k] = params.momentum * velocity[k] - params.lr * gk
                weights[k] += velocity[k]
                if not np.all(np.isfinite(weights[k])):
                    raise DivergenceError(epoch, loss)
        result.loss.append(total_loss / n)
        result.train_accuracy.append(correct / n)
    result.final_accuracy = accuracy(net.predict(x), y)
    return result
