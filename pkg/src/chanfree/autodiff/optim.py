"""Adam with bias correction and a per-epoch cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from chanfree.autodiff.tensor import Param
from chanfree.errors import ConfigurationError


@dataclass
class TrainSchedule:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 50
    batch_size: int = 64
    cosine_t_max: int | None = None
    lr_floor: float = 0.0

    def __post_init__(self):
        if self.cosine_t_max is None:
            self.cosine_t_max = self.epochs
        if self.learning_rate <= 0 and self.learning_rate != 0.0:
            raise ConfigurationError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1 or self.cosine_t_max < 1:
            raise ConfigurationError("epochs, batch_size and cosine_t_max must be positive")

    def lr_at(self, epoch: float) -> float:
        """Cosine annealing from the base rate at epoch 0 to the floor at ``cosine_t_max``."""
        t = min(max(epoch, 0.0), self.cosine_t_max)
        return self.lr_floor + 0.5 * (self.learning_rate - self.lr_floor) * (1.0 + math.cos(math.pi * t / self.cosine_t_max))


class Adam:
    def __init__(self, params: Iterable[Param], schedule: TrainSchedule, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.schedule = schedule
        self.beta1, self.beta2 = betas
        self.eps = eps

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, epoch: float = 0, allow_missing: bool = False):
        """Apply one update at the learning rate the schedule gives for ``epoch``.

        Every parameter must carry a gradient unless ``allow_missing`` is set,
        in which case parameters without one are skipped untouched.
        """
        lr = self.schedule.lr_at(epoch)
        wd = self.schedule.weight_decay
        for p in self.params:
            if p.grad is None:
                if allow_missing:
                    continue
                raise ConfigurationError(f"parameter {p.name or id(p)} has no gradient")
            g = p.grad + wd * p.data if wd else p.grad
            p.step += 1
            p.m *= self.beta1
            p.m += (1 - self.beta1) * g
            p.v *= self.beta2
            p.v += (1 - self.beta2) * g * g
            if lr == 0.0:
                continue
            m_hat = p.m / (1 - self.beta1 ** p.step)
            v_hat = p.v / (1 - self.beta2 ** p.step)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)
