from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .layers import softmax_cross_entropy
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 50
    batch_size: int = 128
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epsilon <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning rate, epsilon, epochs and batch size must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def train(model, images, labels, cfg: TrainConfig = TrainConfig(), callback=None) -> list[float]:
    """Minimize softmax cross-entropy with Adam; returns the mean loss of every epoch.

    ``labels`` are class indices (1 = crying). The data order is reshuffled each
    epoch from ``cfg.rng_seed``. The model is left in eval mode.
    """
    x = model._as_batch(images)
    y = np.asarray(labels, dtype=int)
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(y) != len(x):
        raise ValueError("one label per image required")
    if len(np.unique(y)) < 2:
        log.warning("training set contains a single class")
    rng = np.random.default_rng(cfg.rng_seed)
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    model.set_mode("train")
    history = []
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(x))
            total = 0.0
            for i in range(0, len(x), cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                opt.zero_grad()
                logits = model.forward(x[idx])
                loss, grad = softmax_cross_entropy(logits, y[idx])
                model.backward(grad)
                opt.step()
                total += loss * len(idx)
            history.append(total / len(x))
            log.debug("epoch %d loss %.5f", epoch + 1, history[-1])
            if callback is not None:
                callback(epoch, history[-1])
    finally:
        model.set_mode("eval")
    return history
