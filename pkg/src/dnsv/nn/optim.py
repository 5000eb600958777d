"""SGD with momentum and L2 weight decay, plus the plateau LR schedule."""

from __future__ import annotations

import numpy as np


def sgd_step(params, grads, velocity, lr, momentum=0.9, weight_decay=1e-4, no_decay=()):
    """One in-place update of every parameter in ``grads``.

    v <- momentum * v - lr * (g + weight_decay * theta);  theta <- theta + v

    ``params``/``grads``/``velocity`` are dicts keyed by parameter name; missing
    velocity entries start at zero. Names in ``no_decay`` skip weight decay.
    """
    for name, g in grads.items():
        theta = params[name]
        step = g if (weight_decay == 0 or name in no_decay) else g + weight_decay * theta
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(theta)
        v *= momentum
        v -= lr * step
        velocity[name] = v
        theta += v
    return params


class PlateauSchedule:
    """Walks through ``rates``, moving to the next one when the epoch loss
    improves by less than ``rel_tol`` (relative) for ``patience`` epochs in
    a row."""

    def __init__(self, rates=(0.1, 0.01, 0.001), rel_tol=0.01, patience=3):
        if not rates:
            raise ValueError("need at least one learning rate")
        self.rates = tuple(float(r) for r in rates)
        self.rel_tol = rel_tol
        self.patience = patience
        self.index = 0
        self._best = None
        self._stale = 0

    @property
    def lr(self) -> float:
        return self.rates[self.index]

    def step(self, epoch_loss: float) -> float:
        if self._best is None or epoch_loss < self._best * (1.0 - self.rel_tol):
            self._stale = 0
        else:
            self._stale += 1
        if self._best is None or epoch_loss < self._best:
            self._best = epoch_loss
        if self._stale >= self.patience and self.index < len(self.rates) - 1:
            self.index += 1
            self._stale = 0
            self._best = epoch_loss
        return self.lr
