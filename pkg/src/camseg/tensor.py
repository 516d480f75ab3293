"""Dense float32 tensors with reverse-mode automatic differentiation.

The engine is define-by-run: every operation that produces a tensor with
``requires_grad`` records its parents and a backward closure on the output.
``Tensor.backward()`` materialises the recorded operations in topological
order (the tape) and replays it in reverse exactly once, accumulating
gradients additively so that tensors used several times receive the sum of
their per-use gradients.

Data is stored as 32-bit floats; reductions (sums, means, pooling, loss
averages) accumulate in 64 bits before rounding back. All operations are
pure and deterministic: same inputs give bit-identical outputs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GraphError, ShapeError

# When True, every forward op asserts its output is finite. Cheap insurance
# for debugging; off by default because it touches every element.
DEBUG_CHECKS = False

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording inside its scope."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional float32 array, optionally a node in the autodiff graph.

    ``grad`` is None until ``backward()`` reaches the tensor; it always has
    the same shape as ``data`` once populated. Only tensors created with
    ``requires_grad=True`` (or computed from one) participate in the graph.
    """

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: np.ndarray | None = None
        self.name = name
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        # scalar reductions keep their 64-bit accumulator here; see item64()
        self._acc64: float | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def item64(self) -> float:
        """Scalar value at reduction precision: the 64-bit accumulator when
        the tensor came from a scalar reduction, else the stored float32."""
        if self._acc64 is not None:
            return self._acc64
        return self.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- graph plumbing -------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(np.float32, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Populates ``grad`` on every requires_grad tensor reachable from this
        one. Raises GraphError if the tensor is not a scalar.
        """
        if self.data.size != 1:
            raise GraphError(f"backward() requires a scalar loss, got shape {self.shape}")
        self.grad = np.ones_like(self.data)
        for node in reversed(_topo_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self) -> "Tensor":
        return tmean(self)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def relu(self) -> "Tensor":
        return relu(self)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Tape for the backward sweep: parents always precede their outputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._prev:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[Tensor], Callable[[], None]]) -> Tensor:
    """Wrap an op result; attaches the backward closure only when recording."""
    if DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in op output")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward(out)
    return out


def _as_f32(data: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(data, dtype=np.float32)


# -- elementwise arithmetic ---------------------------------------------------


def _check_broadcast(sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    """Equal-rank broadcasting only: each axis must match or be 1 on one side."""
    if len(sa) != len(sb):
        raise ShapeError(f"rank mismatch {sa} vs {sb}; pad shapes explicitly")
    for axis, (a, b) in enumerate(zip(sa, sb)):
        if a != b and a != 1 and b != 1:
            raise ShapeError(f"axis {axis} mismatch: {sa} vs {sb}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce gradient over axes that were broadcast in the forward op."""
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True, dtype=np.float64).astype(np.float32)
    return g


def _fold_acc64(out: Tensor, a: Tensor, b, combine) -> None:
    # keep scalar loss arithmetic at reduction precision
    if out.data.size != 1 or a._acc64 is None:
        return
    bval = (b._acc64 if b._acc64 is not None else b.item()) if isinstance(b, Tensor) else float(b)
    out._acc64 = combine(a._acc64, bval)


def add(a: Tensor, b) -> Tensor:
    """Elementwise a + b; b may be a scalar or an equal-rank broadcastable tensor."""
    if not isinstance(b, Tensor):
        bval = float(b)

        def bw_scalar(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad)
            return run

        out = _make(a.data + np.float32(bval), [a], bw_scalar)
        _fold_acc64(out, a, bval, lambda u, v: u + v)
        return out

    _check_broadcast(a.shape, b.shape)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(_reduce_to(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(out.grad, b.shape))
        return run

    out = _make(a.data + b.data, [a, b], bw)
    _fold_acc64(out, a, b, lambda u, v: u + v)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise a * b; b may be a scalar or an equal-rank broadcastable tensor."""
    if not isinstance(b, Tensor):
        bval = np.float32(float(b))

        def bw_scalar(out):
            def run():
                if a.requires_grad:
                    a._accumulate(out.grad * bval)
            return run

        out = _make(a.data * bval, [a], bw_scalar)
        _fold_acc64(out, a, float(bval), lambda u, v: u * v)
        return out

    _check_broadcast(a.shape, b.shape)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(_reduce_to(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_reduce_to(out.grad * a.data, b.shape))
        return run

    out = _make(a.data * b.data, [a, b], bw)
    _fold_acc64(out, a, b, lambda u, v: u * v)
    return out


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is 0."""
    mask = x.data > 0

    def bw(out):
        def run():
            if x.requires_grad:
                x._accumulate(out.grad * mask)
        return run

    return _make(np.maximum(x.data, 0), [x], bw)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow; gradient is sigmoid(x)."""
    data = np.log1p(np.exp(-np.abs(x.data))) + np.maximum(x.data, 0)

    def bw(out):
        def run():
            if x.requires_grad:
                sig = _sigmoid(x.data)
                x._accumulate(out.grad * sig)
        return run

    return _make(data, [x], bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- reductions and shape ops -------------------------------------------------


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Sum over all elements or one axis; accumulates in 64-bit."""
    acc = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)

    def bw(out):
        def run():
            if not x.requires_grad:
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.shape))
        return run

    out = _make(acc.astype(np.float32), [x], bw)
    if out.data.size == 1:
        out._acc64 = float(np.asarray(acc).reshape(()))
    return out


def tmean(x: Tensor) -> Tensor:
    """Mean over all elements; accumulates in 64-bit."""
    n = x.data.size
    acc = x.data.mean(dtype=np.float64)

    def bw(out):
        def run():
            if x.requires_grad:
                x._accumulate(np.broadcast_to(out.grad / n, x.shape))
        return run

    out = _make(np.float32(acc), [x], bw)
    out._acc64 = float(acc)
    return out


def mean_tensors(tensors: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of equal-shape tensors, accumulated in 64-bit.

    Averaging k copies of the same tensor reproduces it exactly.
    """
    if not tensors:
        raise ShapeError("mean_tensors needs at least one tensor")
    first = tensors[0]
    for t in tensors[1:]:
        if t.shape != first.shape:
            raise ShapeError(f"shape mismatch in mean: {first.shape} vs {t.shape}")
    k = len(tensors)
    acc = np.zeros(first.shape, dtype=np.float64)
    for t in tensors:
        acc += t.data
    data = (acc / k).astype(np.float32)

    def bw(out):
        def run():
            for t in tensors:
                if t.requires_grad:
                    t._accumulate(out.grad / k)
        return run

    return _make(data, list(tensors), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bw(out):
        def run():
            if x.requires_grad:
                x._accumulate(out.grad.reshape(x.shape))
        return run

    return _make(x.data.reshape(shape), [x], bw)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis, order preserved."""
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    first = tensors[0]
    for t in tensors[1:]:
        if t.ndim != 4 or first.ndim != 4:
            raise ShapeError("concat_channels expects 4-d NCHW tensors")
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ShapeError(f"spatial/batch mismatch in concat: {first.shape} vs {t.shape}")
    widths = [t.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def bw(out):
        def run():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    t._accumulate(out.grad[:, lo:hi])
        return run

    return _make(np.concatenate([t.data for t in tensors], axis=1), list(tensors), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """NCHW -> NC spatial mean, 64-bit accumulation."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    data = x.data.mean(axis=(2, 3), dtype=np.float64).astype(np.float32)

    def bw(out):
        def run():
            if x.requires_grad:
                g = out.grad[:, :, None, None] / (h * w)
                x._accumulate(np.broadcast_to(g, x.shape))
        return run

    return _make(data, [x], bw)


# -- convolution --------------------------------------------------------------


def _conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int) -> tuple[np.ndarray, int, int]:
    """(N,C,H,W) -> (N, C*k*k, H_out*W_out) patch matrix."""
    n, c, h, w = x.shape
    h_out = _conv_out_size(h, k, stride, padding)
    w_out = _conv_out_size(w, k, stride, padding)
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"kernel {k} with padding {padding} exceeds input {h}x{w}")
    if k == 1 and stride == 1 and padding == 0:
        return x.reshape(n, c, h * w), h_out, w_out
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sn, sc, sh, sw = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, k, k, h_out, w_out),
        strides=(sn, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return patches.reshape(n, c * k * k, h_out * w_out), h_out, w_out


def _col2im(cols: np.ndarray, n: int, c: int, h: int, w: int,
            k: int, stride: int, padding: int, h_out: int, w_out: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back into an (N,C,H,W) image."""
    if k == 1 and stride == 1 and padding == 0:
        return _as_f32(cols.reshape(n, c, h, w))
    buf = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float32)
    c6 = cols.reshape(n, c, k, k, h_out, w_out)
    for ki in range(k):
        for kj in range(k):
            buf[:, :, ki:ki + stride * h_out:stride, kj:kj + stride * w_out:stride] += c6[:, :, ki, kj]
    if padding:
        buf = buf[:, :, padding:padding + h, padding:padding + w]
    return _as_f32(buf)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution: (N,I,H,W) with (O,I,K,K) weights -> (N,O,H',W')."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_w, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv2d kernels must be square, got {k}x{k2}")
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input axis 1 is {cin}, weight axis 1 is {cin_w}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    if stride < 1 or k < 1:
        raise ShapeError("conv2d needs stride >= 1 and kernel >= 1")

    cols, h_out, w_out = _im2col(x.data, k, stride, padding)
    w2 = weight.data.reshape(cout, cin * k * k)
    out = np.matmul(w2, cols)  # (N, O, L)
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(n, cout, h_out, w_out)

    def bw(o):
        def run():
            g2 = o.grad.reshape(n, cout, h_out * w_out)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g2.sum(axis=(0, 2), dtype=np.float64).astype(np.float32))
            if weight.requires_grad:
                gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
                weight._accumulate(gw.reshape(weight.shape))
            if x.requires_grad:
                gcols = np.matmul(w2.T, g2)
                x._accumulate(_col2im(gcols, n, cin, h, w, k, stride, padding, h_out, w_out))
        return run

    parents = [x, weight] if bias is None else [x, weight, bias]
    return _make(_as_f32(out), parents, bw)


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution, the exact adjoint of conv2d with the same weight.

    Input (N,O,h,w) with weight (O,I,K,K) gives (N,I,H,W) where
    H = (h-1)*stride - 2*padding + K. Bias, when given, has I entries.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d_transpose expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout_w, cout, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv2d_transpose kernels must be square, got {k}x{k2}")
    if cin != cout_w:
        raise ShapeError(f"conv2d_transpose channel mismatch: input axis 1 is {cin}, weight axis 0 is {cout_w}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d_transpose bias must have shape ({cout},), got {bias.shape}")
    if stride < 1 or k < 1:
        raise ShapeError("conv2d_transpose needs stride >= 1 and kernel >= 1")
    h_up = (h - 1) * stride - 2 * padding + k
    w_up = (w - 1) * stride - 2 * padding + k
    if h_up < 1 or w_up < 1:
        raise ShapeError(f"conv2d_transpose output would be empty for input {h}x{w}")

    x2 = x.data.reshape(n, cin, h * w)
    w2 = weight.data.reshape(cin, cout * k * k)
    cols = np.matmul(w2.T, x2)  # (N, I*K*K, h*w)
    out = _col2im(cols, n, cout, h_up, w_up, k, stride, padding, h, w)
    if bias is not None:
        out = _as_f32(out + bias.data[None, :, None, None])

    def bw(o):
        def run():
            gcols, _, _ = _im2col(o.grad, k, stride, padding)
            if bias is not None and bias.requires_grad:
                bias._accumulate(o.grad.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32))
            if weight.requires_grad:
                gw = np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0)
                weight._accumulate(gw.reshape(weight.shape))
            if x.requires_grad:
                gx = np.matmul(w2, gcols).reshape(n, cin, h, w)
                x._accumulate(_as_f32(gx))
        return run

    parents = [x, weight] if bias is None else [x, weight, bias]
    return _make(out, parents, bw)


# -- fused losses and normalisation -------------------------------------------


def softmax_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean per-pixel cross entropy with softmax over the channel axis.

    ``target`` is a constant one-hot array of the same shape as ``logits``
    (NCHW). The gradient is (softmax - target) / (N*H*W).
    """
    if logits.ndim != 4:
        raise ShapeError(f"softmax_cross_entropy expects NCHW logits, got {logits.shape}")
    if target.shape != logits.shape:
        raise ShapeError(f"target shape {target.shape} != logits shape {logits.shape}")
    n, c, h, w = logits.shape
    z = logits.data.astype(np.float64)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = zmax + np.log(ez.sum(axis=1, keepdims=True))
    picked = (target * z).sum(axis=1, keepdims=True)
    npix = n * h * w
    acc = (lse - picked).sum() / npix
    probs = (ez / ez.sum(axis=1, keepdims=True)).astype(np.float32)

    def bw(out):
        def run():
            if logits.requires_grad:
                g = (probs - target) * (out.grad / npix)
                logits._accumulate(_as_f32(g))
        return run

    out = _make(np.float32(acc), [logits], bw)
    out._acc64 = float(acc)
    return out


def minmax_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-image min-max rescale of an NCHW map into [0, 1].

    Statistics are taken over all of C,H,W separately for each image in the
    batch. A (numerically) constant image, where max - min < eps, maps to
    all 0.5 and passes zero gradient. The backward treats the argmin/argmax
    locations as fixed, which is exact wherever they are unique.
    """
    if x.ndim != 4:
        raise ShapeError(f"minmax_normalize expects NCHW, got {x.shape}")
    n = x.shape[0]
    flat = x.data.reshape(n, -1)
    amin = flat.argmin(axis=1)
    amax = flat.argmax(axis=1)
    lo = flat[np.arange(n), amin]
    hi = flat[np.arange(n), amax]
    rng = hi - lo
    degenerate = rng < eps
    safe = np.where(degenerate, 1.0, rng).astype(np.float32)
    y = (flat - lo[:, None]) / safe[:, None]
    y[degenerate] = 0.5
    y = y.reshape(x.shape)

    def bw(out):
        def run():
            if not x.requires_grad:
                return
            g = out.grad.reshape(n, -1).astype(np.float64)
            yf = y.reshape(n, -1).astype(np.float64)
            gsum = g.sum(axis=1)
            gysum = (g * yf).sum(axis=1)
            gx = g / safe[:, None]
            idx = np.arange(n)
            gx[idx, amin] += (gysum - gsum) / safe
            gx[idx, amax] -= gysum / safe
            gx[degenerate] = 0.0
            x._accumulate(gx.reshape(x.shape).astype(np.float32))
        return run

    return _make(_as_f32(y), [x], bw)
