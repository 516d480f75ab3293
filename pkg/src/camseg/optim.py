"""Adam optimizer over lists of parameter tensors."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import GraphError
from .tensor import Tensor


class Adam:
    """Standard Adam with bias correction.

    Parameters keep their gradients between ``backward()`` calls (gradients
    accumulate); ``step()`` consumes and clears them. Stepping a parameter
    that never received a gradient is an error, because it almost always
    means a missing backward call.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        # moments kept in 64-bit so the update math is exact to f32 rounding
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in self.params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise GraphError(f"parameter {p.name or i} has no gradient; call backward() before step()")
            g = p.grad.astype(np.float64)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(np.float32)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
