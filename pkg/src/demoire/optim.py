"""Adam optimizer and the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .errors import ConfigError, DivergenceError
from .layers import Param


@dataclass(frozen=True)
class Schedule:
    """Step decay: divide the rate by ``decay_factor`` every ``decay_every``
    epochs; the finetune phase has its own base rate and period."""

    initial_lr: float = 1e-4
    decay_every: int = 30
    decay_factor: float = 10.0
    finetune_lr: float = 1e-5
    finetune_decay_every: int = 50

    def __post_init__(self):
        for field in ("initial_lr", "decay_every", "decay_factor",
                      "finetune_lr", "finetune_decay_every"):
            if getattr(self, field) <= 0:
                raise ConfigError(f"schedule.{field} must be positive")


def lr_at(epoch: int, schedule: Schedule, phase: str = "base") -> float:
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    if phase == "base":
        base, every = schedule.initial_lr, schedule.decay_every
    elif phase == "finetune":
        base, every = schedule.finetune_lr, schedule.finetune_decay_every
    else:
        raise ConfigError(f"unknown schedule phase {phase!r}")
    # decimal division keeps decade schedules exact (1e-5 / 10 -> 1e-6;
    # plain float division would land one ulp off)
    k = epoch // every
    return float(Decimal(str(base)) / Decimal(str(schedule.decay_factor)) ** k)


class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params: list[Param], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.grad[:] = 0.0

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise DivergenceError(f"non-finite gradient on {p.name}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p in self.params:
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def carry_state_from(self, other: "Adam"):
        """Adopt moments and step counter for parameters that persist across
        a model growth boundary; new parameters keep zero moments."""
        self.step_count = other.step_count
        for name in self.m:
            if name in other.m and other.m[name].shape == self.m[name].shape:
                self.m[name][:] = other.m[name]
                self.v[name][:] = other.v[name]
            elif name in other.m:
                # the scale vector grows with the branch count
                k = min(other.m[name].size, self.m[name].size)
                self.m[name].reshape(-1)[:k] = other.m[name].reshape(-1)[:k]
                self.v[name].reshape(-1)[:k] = other.v[name].reshape(-1)[:k]


def adam_step(optimizer: Adam):
    """Apply one update from the accumulated gradients."""
    optimizer.step()
