"""Adam optimizer contracts."""

import numpy as np
import pytest

from camseg.errors import GraphError
from camseg.optim import Adam
from camseg.tensor import Tensor


def test_zero_gradient_leaves_parameters_unchanged():
    p = Tensor(np.array([1.5, -2.0], np.float32), requires_grad=True)
    opt = Adam([p], lr=0.1)
    before = p.data.copy()
    p.grad = np.zeros_like(p.data)
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_first_step_closed_form():
    # constant gradient 1: bias-corrected moments give step -lr/(1+eps)
    p = Tensor(np.array([0.0], np.float32), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.ones(1, np.float32)
    opt.step()
    assert abs(float(p.data[0]) + 0.1) < 1e-6


def test_ten_steps_bit_identical_across_runs():
    def run():
        rng = np.random.default_rng(7)
        p = Tensor(rng.standard_normal(5).astype(np.float32), requires_grad=True)
        opt = Adam([p], lr=1e-2)
        for _ in range(10):
            p.grad = (p.data * 0.3 + 1.0).astype(np.float32)
            opt.step()
        return p.data.copy()

    np.testing.assert_array_equal(run(), run())


def test_missing_gradient_is_contract_error():
    p = Tensor(np.zeros(2, np.float32), requires_grad=True)
    opt = Adam([p], lr=0.1)
    with pytest.raises(GraphError, match="no gradient"):
        opt.step()


def test_gradients_cleared_after_step():
    p = Tensor(np.zeros(2, np.float32), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.ones(2, np.float32)
    opt.step()
    assert p.grad is None
    with pytest.raises(GraphError):
        opt.step()


def test_schedulable_learning_rate():
    p = Tensor(np.zeros(1, np.float32), requires_grad=True)
    opt = Adam([p], lr=1.0)
    p.grad = np.ones(1, np.float32)
    opt.lr = 0.5
    opt.step()
    assert abs(float(p.data[0]) + 0.5) < 1e-6
