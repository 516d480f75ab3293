"""Central finite-difference gradient checking.

The checker is deliberately independent of the autodiff engine: it only
calls forward evaluations. Differences are accumulated in 64-bit, and each
quotient is divided by the step that was actually realised after float32
rounding of the perturbed entry, which removes the dominant rounding term.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def eval_scalar(loss_fn: Callable[[], Tensor]) -> float:
    """Forward-only evaluation of a scalar loss, no graph recorded.

    Reads the loss at reduction precision (the 64-bit accumulator) so the
    difference quotient is not quantised by the float32 storage of large
    loss values.
    """
    with no_grad():
        return loss_fn().item64()


def fd_entry(loss_fn: Callable[[], Tensor], x: np.ndarray, idx: int, h: float = 1e-3) -> float:
    """Central difference w.r.t. one flat entry of x (temporarily mutated)."""
    flat = x.reshape(-1)
    orig = flat[idx]
    hi = np.float32(orig + h)
    lo = np.float32(orig - h)
    flat[idx] = hi
    f_hi = eval_scalar(loss_fn)
    flat[idx] = lo
    f_lo = eval_scalar(loss_fn)
    flat[idx] = orig
    return (f_hi - f_lo) / (float(hi) - float(lo))


def numeric_gradient(loss_fn: Callable[[], Tensor], x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Finite-difference gradient of the loss w.r.t. every entry of x."""
    g = np.zeros(x.size, dtype=np.float64)
    for i in range(x.size):
        g[i] = fd_entry(loss_fn, x, i, h)
    return g.reshape(x.shape)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero pairs finite."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


def max_gradient_error(loss_fn: Callable[[], Tensor], wrt: Sequence[Tensor],
                       h: float = 1e-3, floor: float = 1e-4) -> float:
    """Worst relative error between autodiff and finite differences.

    Runs one fresh forward+backward for the analytic gradients, then checks
    every entry of every tensor in ``wrt`` against a central difference.
    """
    for p in wrt:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in wrt:
        if p.grad is None:
            raise AssertionError(f"no gradient reached {p!r}")
        numeric = numeric_gradient(loss_fn, p.data, h)
        worst = max(worst, float(relative_errors(p.grad, numeric, floor).max()))
    return worst


def sampled_gradient_errors(loss_fn: Callable[[], Tensor], wrt: Sequence[Tensor],
                            n_samples: int, rng: np.random.Generator,
                            h: float = 1e-3, floor: float = 1e-4) -> np.ndarray:
    """Relative errors at randomly sampled parameter entries.

    Samples uniformly over the concatenation of all entries of ``wrt``, so
    large tensors are visited proportionally more often.
    """
    for p in wrt:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    sizes = np.array([p.size for p in wrt])
    bounds = np.cumsum(sizes)
    errs = np.zeros(n_samples, dtype=np.float64)
    for s in range(n_samples):
        flat_idx = int(rng.integers(bounds[-1]))
        which = int(np.searchsorted(bounds, flat_idx, side="right"))
        local = flat_idx - (bounds[which] - sizes[which])
        p = wrt[which]
        analytic = float(p.grad.reshape(-1)[local])
        numeric = fd_entry(loss_fn, p.data, local, h)
        errs[s] = float(relative_errors(np.array(analytic), np.array(numeric), floor))
    return errs
