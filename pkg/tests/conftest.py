import numpy as np
import pytest

from camseg.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def grid_tensor(rng, *shape, lo=77, hi=257, sign=False, requires_grad=True):
    """Random tensor on the 1/256 dyadic grid.

    Products and sums of grid values are exact in float32, so finite
    differences see only the perturbation being measured.
    """
    v = rng.integers(lo, hi, shape).astype(np.float32) / 256.0
    if sign:
        v = v * rng.choice([-1.0, 1.0], shape).astype(np.float32)
    return Tensor(v, requires_grad=requires_grad)
