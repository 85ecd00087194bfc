"""SGD with momentum and weight decay, plus the plateau learning-rate rule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .network import is_decayed


@dataclass(frozen=True)
class PlateauRule:
    window: int = 5
    min_rel_improvement: float = 1e-3
    factor: float = 10.0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 64
    max_epochs: int = 20
    dropout: float = 0.0
    seed: int = 0
    plateau: PlateauRule = field(default_factory=PlateauRule)
    augment: bool = False
    pad: int = 4
    flip_prob: float = 0.5

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


def sgd_step(params, grads, velocity, cfg, lr=None):
    """One momentum-SGD update over dicts keyed by parameter name.

    ``g' = g + wd * w`` (weights only), ``v' = momentum * v + g'``,
    ``w' = w - lr * v'``. Missing velocity entries start at zero. Returns
    new ``(params, velocity)`` dicts; the inputs are left untouched.
    """
    lr = cfg.lr if lr is None else lr
    new_params, new_velocity = {}, {}
    for key, w in params.items():
        g = grads[key]
        if g.shape != w.shape:
            raise DimensionError(f"gradient for {key} has shape {g.shape}, parameter has {w.shape}")
        v = velocity.get(key)
        if v is None:
            v = np.zeros_like(w)
        elif v.shape != w.shape:
            raise DimensionError(f"velocity for {key} has shape {v.shape}, parameter has {w.shape}")
        if cfg.weight_decay and is_decayed(key):
            g = g + cfg.weight_decay * w
        v = cfg.momentum * v + g
        new_velocity[key] = v
        new_params[key] = w - lr * v
    return new_params, new_velocity


def plateau_schedule(log, cfg):
    """Learning rate for the next epoch.

    Looks at the epochs trained at the current rate. Once there are at least
    ``window`` of them, compares the mean train loss of the first and last
    epoch of the most recent window; if the relative improvement is below
    ``min_rel_improvement`` the rate is divided by ``factor``. Counting
    restarts after each reduction, so there is at most one cut per window.
    """
    rule = cfg.plateau
    records = log.records
    if not records:
        return cfg.lr
    lr = records[-1].lr
    run = 0
    for rec in reversed(records):
        if rec.lr != lr:
            break
        run += 1
    if run < rule.window:
        return lr
    first = records[-rule.window].train_loss
    last = records[-1].train_loss
    improvement = (first - last) / abs(first) if first != 0 else 0.0
    if improvement < rule.min_rel_improvement:
        return lr / rule.factor
    return lr
