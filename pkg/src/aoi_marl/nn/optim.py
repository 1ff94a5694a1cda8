"""Adam optimizer with bias correction."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


class Adam:
    """Standard Adam; gradients are cleared after each step.

    The step counter increases by exactly one per :meth:`step` call, and
    the per-parameter moment buffers always match the parameter shapes.
    """

    def __init__(self, params: Iterable[Parameter], learning_rate: float = 0.005,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = {p.id: np.zeros_like(p.data) for p in self.params}
        self.second_moment = {p.id: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for p in self.params:
            g = p.grad
            m = self.first_moment[p.id]
            v = self.second_moment[p.id]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
            p.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
