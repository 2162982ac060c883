"""Parameter optimizers operating on tensor leaves."""

from __future__ import annotations

import math
from typing import Callable, List, Optional, Sequence

import numpy as np

from .tensor import Tensor

Schedule = Callable[[int], float]


def constant_schedule() -> Schedule:
    return lambda step: 1.0


def warmup_inverse_sqrt(warmup_steps: int) -> Schedule:
    """Linear warmup to 1, then decay as ``sqrt(warmup / step)``."""
    if warmup_steps < 1:
        return lambda step: 1.0 / math.sqrt(max(step, 1))

    def schedule(step: int) -> float:
        step = max(step, 1)
        if step <= warmup_steps:
            return step / warmup_steps
        return math.sqrt(warmup_steps / step)

    return schedule


class Optimizer:
    def __init__(self, params: Sequence[Tensor], lr: float, schedule: Optional[Schedule] = None):
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.schedule = schedule or constant_schedule()
        self.t = 0

    @property
    def current_lr(self) -> float:
        return self.lr * self.schedule(max(self.t, 1))

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        return math.sqrt(total)

    def step(self) -> None:  # pragma: no cover - abstract
        raise NotImplementedError


class SGD(Optimizer):
    def step(self) -> None:
        self.t += 1
        lr = self.current_lr
        for p in self.params:
            if p.grad is not None:
                p.data -= (lr * p.grad).astype(p.data.dtype)


class Adam(Optimizer):
    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        schedule: Optional[Schedule] = None,
    ):
        super().__init__(params, lr, schedule)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        lr = self.current_lr
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (p.grad**2)
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
