from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import GradkitError, Tensor


class Adam:
    """Adam with bias correction.  ``step`` consumes and clears the grads."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                label = p.name or f"#{i}"
                raise GradkitError(f"adam_step: parameter {label} has no gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(state: Adam, params=None) -> None:
    """Functional form; ``params`` must be the ones the state was built for."""
    if params is not None and [id(p) for p in params] != [id(p) for p in state.params]:
        raise GradkitError("adam_step: parameter list does not match optimizer state")
    state.step()
