"""AdamW with decoupled weight decay, plus the warmup/cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError
from .tensor import ParameterSet


@dataclass
class Schedule:
    warmup_steps: int
    total_steps: int
    base_lr: float
    min_lr: float = 0.0

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must lie in [0, total_steps]")


def lr_at(sched: Schedule, step: int) -> float:
    """Linear warmup to base_lr, then half-cycle cosine decay to min_lr."""
    if not 0 <= step <= sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps}]")
    if step < sched.warmup_steps:
        return sched.base_lr * step / sched.warmup_steps
    span = sched.total_steps - sched.warmup_steps
    progress = (step - sched.warmup_steps) / span if span else 1.0
    return sched.min_lr + (sched.base_lr - sched.min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Standard AdamW; weight decay multiplies the weight, never the gradient."""

    def __init__(self, params: ParameterSet, base_lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0, clip_norm: float | None = None):
        self.params = params
        self.base_lr = base_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        """One update over every parameter; gradients are zeroed afterwards."""
        lr = self.base_lr if lr is None else lr
        for name, p in self.params.items():
            if not np.all(np.isfinite(p.grad)):
                raise EvaluationError(f"non-finite gradient in parameter {name!r}")
        if self.clip_norm is not None:
            sq = sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in self.params)
            norm = math.sqrt(sq)
            if norm > self.clip_norm:
                factor = self.clip_norm / norm
                for p in self.params:
                    p.grad *= factor
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if self.weight_decay:
                p.data *= (1.0 - lr * self.weight_decay)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= lr * update
            p.grad.fill(0.0)
