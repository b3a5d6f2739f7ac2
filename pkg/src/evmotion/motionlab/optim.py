"""SGD with momentum, weight decay and a two-stage step schedule."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InputError, NumericError


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-7
    iterations: int = 5000
    lr_decay_to: float = 1e-3
    decay_step: Optional[int] = None   # None: 60% of ``iterations`` (3000 of 5000)
    batch_size: int = 128
    alpha: float = 100.0
    distill_reduction: str = "mean"    # over the batch; features are always summed
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if not self.lr > 0:
            raise InputError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise InputError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.alpha < 0:
            raise InputError(f"alpha must be >= 0, got {self.alpha}")
        if self.weight_decay < 0:
            raise InputError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.iterations < 0 or self.batch_size < 1 or self.log_every < 1:
            raise InputError("iterations must be >= 0 and batch_size, log_every >= 1")
        if self.distill_reduction not in ("mean", "sum"):
            raise InputError(f"distill_reduction must be 'mean' or 'sum', got {self.distill_reduction!r}")

    @property
    def decay_at(self):
        if self.decay_step is not None:
            return int(self.decay_step)
        return int(round(self.iterations * 3000 / 5000))


def lr_at(step, cfg: TrainConfig):
    return cfg.lr if step < cfg.decay_at else cfg.lr_decay_to


def init_state(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def sgd_step(params, grads, state, cfg: TrainConfig, step=0, frozen=False):
    """One update in place: ``v <- mu*v + g + wd*theta``, ``theta <- theta - lr_t*v``.

    Returns ``(params, state)``.
    """
    if frozen:
        raise InputError("refusing to update a frozen parameter set")
    lr = lr_at(step, cfg)
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise InputError(f"gradient for {name} has shape {g.shape}, parameter has {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", iteration=step)
        v = state[name]
        v *= cfg.momentum
        v += g
        v += cfg.weight_decay * theta
        theta -= lr * v
    return params, state
