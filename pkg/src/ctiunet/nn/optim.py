"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import HarnessError
from .tensor import Parameter


class Adam:
    """Standard Adam.

    Moments are zero-initialized per parameter; the step counter starts at 0
    and increments by exactly 1 per :meth:`step`. Defaults: lr 1e-4,
    beta1 0.9, beta2 0.999, eps 1e-8 (eps added outside the square root).
    """

    def __init__(self, params: list[Parameter], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise HarnessError("Adam: duplicate parameter names")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            if not p.has_grad:
                raise HarnessError(
                    f"Adam.step: gradient for {p.name!r} was never populated "
                    "(run a backward pass before stepping)"
                )
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
