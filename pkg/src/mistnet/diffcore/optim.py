"""Adam with bias correction; moment buffers live on each Parameter."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter

DEFAULT_LR = 2.5e-4


class MissingGradError(RuntimeError):
    pass


def adam_step(params: Iterable[Parameter], lr: float = DEFAULT_LR, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update of every parameter, then clear the gradients."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise MissingGradError(f"parameter {p.name or p!r} has no gradient")
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.data = p.data - (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)
        p.grad = None


class Adam:
    """Thin stateful wrapper so training loops can hold the hyperparameters."""

    def __init__(self, params: Iterable[Parameter], lr: float = DEFAULT_LR,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
