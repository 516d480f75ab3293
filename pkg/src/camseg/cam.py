"""Class-representation activation maps.

The head projects backbone features onto one channel per known class with a
1x1 convolution, refines the class stack with three parallel branches (one
3x3, two 1x1) summed together, and pools the refined support stack into a
per-class weight vector. For a query, the same refined stack is collapsed
into a single foreground prior by summing channels weighted by that vector.
One head instance serves both the support and query paths, so the class ->
channel correspondence is shared by construction.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeError, ValidationError
from .layers import Conv2d
from .tensor import Tensor


class CamHead:
    def __init__(self, in_channels: int, n_classes: int, rng: np.random.Generator):
        self.n_classes = n_classes
        self.project = Conv2d(in_channels, n_classes, 1, rng=rng)
        self.refine3 = Conv2d(n_classes, n_classes, 3, padding=1, rng=rng)
        self.refine1a = Conv2d(n_classes, n_classes, 1, rng=rng)
        self.refine1b = Conv2d(n_classes, n_classes, 1, rng=rng)

    def project_to_classes(self, feature: Tensor) -> Tensor:
        """Reduce feature channels to one activation map per known class."""
        return self.project(feature)

    def refine_multiscale(self, stack: Tensor) -> Tensor:
        """Sum of the 3x3 and the two 1x1 branch outputs; shape preserved."""
        if stack.shape[1] != self.n_classes:
            raise ShapeError(f"refine expects {self.n_classes} class channels, got {stack.shape[1]}")
        return self.refine3(stack) + self.refine1a(stack) + self.refine1b(stack)

    def forward(self, feature: Tensor) -> Tensor:
        return self.refine_multiscale(self.project_to_classes(feature))

    __call__ = forward

    def class_weights(self, refined_stack: Tensor) -> Tensor:
        """Global average pooling of the refined stack: (N,n,h,w) -> (N,n)."""
        return T.global_avg_pool(refined_stack)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for lname, layer in (("project", self.project), ("refine3", self.refine3),
                             ("refine1a", self.refine1a), ("refine1b", self.refine1b)):
            for pname, p in layer.params().items():
                out[f"cam.{lname}.{pname}"] = p
        return out

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.named_parameters().values() if p.requires_grad]


def mask_support(image: Tensor, mask: np.ndarray) -> Tensor:
    """Zero background pixels of an (N,3,H,W) image using a binary (N,1,H,W) mask."""
    mask = np.asarray(mask, dtype=np.float32)
    if mask.ndim != 4 or mask.shape[1] != 1:
        raise ShapeError(f"support mask must be (N,1,H,W), got {mask.shape}")
    if mask.shape[0] != image.shape[0] or mask.shape[2:] != image.shape[2:]:
        raise ShapeError(f"mask {mask.shape} does not match image {image.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValidationError("support mask must be binary (0/1)")
    return T.mul(image, Tensor(mask))


def classification_loss(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Multi-label logistic loss: mean over classes of log(1 + exp(-label * score)).

    ``labels`` holds -1/+1 per class (+1 iff the class is present). Computed
    through softplus, so large scores cannot overflow.
    """
    labels = np.asarray(labels, dtype=np.float32)
    if labels.shape != scores.shape:
        raise ShapeError(f"labels shape {labels.shape} != scores shape {scores.shape}")
    if not np.all(np.abs(labels) == 1.0):
        raise ValidationError("class labels must be -1 or +1")
    margin = T.mul(scores, Tensor(-labels))
    return T.softplus(margin).mean()


def query_prior(refined_stack: Tensor, weights: Tensor) -> Tensor:
    """Weighted channel sum: (N,n,h,w) x (N,n) -> (N,1,h,w) foreground prior."""
    if weights.ndim != 2:
        raise ShapeError(f"class weights must be (N,n), got {weights.shape}")
    n, c = weights.shape
    if refined_stack.shape[0] != n or refined_stack.shape[1] != c:
        raise ShapeError(
            f"stack {refined_stack.shape} incompatible with {n}x{c} weight vector")
    w = weights.reshape(n, c, 1, 1)
    return T.mul(refined_stack, w).sum(axis=1, keepdims=True)


def aggregate_kshot(weight_vectors: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of per-support class weight vectors.

    Exact for identical inputs: averaging k copies of one vector returns
    that vector bit for bit.
    """
    if not weight_vectors:
        raise ValidationError("need at least one support weight vector")
    return T.mean_tensors(list(weight_vectors))
