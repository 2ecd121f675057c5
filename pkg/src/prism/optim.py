"""Adam optimizer and the warmup-plus-cosine learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Parameter


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to `peak`, then cosine decay to `floor`."""

    warmup_start: float = 1e-5
    peak: float = 5e-4
    floor: float = 1e-4
    warmup_steps: int = 5000
    total_steps: int = 50000

    def __post_init__(self):
        if not (self.warmup_start <= self.peak):
            raise ValueError("warmup_start must not exceed peak")
        if not (self.floor <= self.peak):
            raise ValueError("floor must not exceed peak")
        if not (0 < self.warmup_steps < self.total_steps):
            raise ValueError("need 0 < warmup_steps < total_steps")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate at `step`. Both branches agree at step == warmup_steps."""
    if not (0 <= step <= schedule.total_steps):
        raise ValueError(
            f"step {step} outside schedule range [0, {schedule.total_steps}]"
        )
    if step <= schedule.warmup_steps:
        frac = step / schedule.warmup_steps
        return schedule.warmup_start + (schedule.peak - schedule.warmup_start) * frac
    frac = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.floor + (schedule.peak - schedule.floor) * 0.5 * (
        1.0 + np.cos(np.pi * frac)
    )


class Adam:
    """Adaptive-moment update, no weight decay.

    Moment buffers live in the parameters' dtype; `step_count` advances by
    one per call so bias correction matches the update count.
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float):
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"parameter {p.name} has no gradient")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for p in self.params:
            dt = p.data.dtype.type
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= dt(b1)
            m += dt(1.0 - b1) * g
            v *= dt(b2)
            v += dt(1.0 - b2) * (g * g)
            mhat = m / dt(bc1)
            vhat = v / dt(bc2)
            p.data -= dt(lr) * mhat / (np.sqrt(vhat) + dt(self.eps))
