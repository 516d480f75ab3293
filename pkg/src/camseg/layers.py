"""Convolution layer parameter bundles shared by the network blocks."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def kaiming_weights(rng: np.random.Generator, out_c: int, in_c: int, k: int) -> np.ndarray:
    """Fan-in scaled normal init for a (out_c, in_c, k, k) kernel."""
    std = np.sqrt(2.0 / (in_c * k * k))
    return (rng.standard_normal((out_c, in_c, k, k)) * std).astype(np.float32)


class Conv2d:
    """conv2d with owned weight/bias tensors."""

    def __init__(self, in_c: int, out_c: int, k: int, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None):
        self.stride = stride
        self.padding = padding
        w = kaiming_weights(rng, out_c, in_c, k) if rng is not None else np.zeros((out_c, in_c, k, k), np.float32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_c, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


class ConvTranspose2d:
    """conv2d_transpose with owned weight/bias tensors.

    Weight layout is (in_c, out_c, k, k), the same orientation conv2d uses,
    so a shared weight satisfies the conv/transpose adjoint identity.
    """

    def __init__(self, in_c: int, out_c: int, k: int, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None):
        self.stride = stride
        self.padding = padding
        w = kaiming_weights(rng, in_c, out_c, k) if rng is not None else np.zeros((in_c, out_c, k, k), np.float32)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_c, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d_transpose(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}
