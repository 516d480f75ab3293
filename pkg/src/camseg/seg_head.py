"""Segmentation head: prior normalisation, feature gating, decoding, loss."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError, ValidationError
from .layers import ConvTranspose2d
from .tensor import Tensor


def normalize_prior(prior: Tensor, eps: float = 1e-8) -> Tensor:
    """Min-max rescale the (N,1,h,w) prior into [0,1], per image.

    A constant prior maps to all 0.5 (neutral gating). NaN input is
    rejected rather than propagated.
    """
    if prior.ndim != 4 or prior.shape[1] != 1:
        raise ShapeError(f"prior must be (N,1,h,w), got {prior.shape}")
    if not np.all(np.isfinite(prior.data)):
        raise ValidationError("prior contains NaN/Inf")
    return T.minmax_normalize(prior, eps=eps)


def gate_features(feature: Tensor, prior: Tensor) -> Tensor:
    """Multiply every feature channel by the single-channel prior map."""
    if prior.ndim != 4 or prior.shape[1] != 1:
        raise ShapeError(f"gating prior must be (N,1,h,w), got {prior.shape}")
    if feature.shape[0] != prior.shape[0] or feature.shape[2:] != prior.shape[2:]:
        raise ShapeError(f"prior {prior.shape} does not match feature {feature.shape}")
    return T.mul(feature, prior)


class Decoder:
    """Three stride-2 transposed convolutions back to input resolution.

    Channel path in_c -> 32 -> 16 -> 2 with ReLU between stages; the final
    stage is linear and emits background/foreground logits.
    """

    def __init__(self, in_channels: int, rng: np.random.Generator,
                 hidden: tuple[int, int] = (32, 16)):
        c1, c2 = hidden
        self.up1 = ConvTranspose2d(in_channels, c1, 4, stride=2, padding=1, rng=rng)
        self.up2 = ConvTranspose2d(c1, c2, 4, stride=2, padding=1, rng=rng)
        self.up3 = ConvTranspose2d(c2, 2, 4, stride=2, padding=1, rng=rng)

    def forward(self, gated: Tensor) -> Tensor:
        x = self.up1(gated).relu()
        x = self.up2(x).relu()
        return self.up3(x)

    __call__ = forward

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for lname, layer in (("up1", self.up1), ("up2", self.up2), ("up3", self.up3)):
            for pname, p in layer.params().items():
                out[f"decoder.{lname}.{pname}"] = p
        return out

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.named_parameters().values() if p.requires_grad]


def seg_loss(logits: Tensor, gt_mask: np.ndarray) -> Tensor:
    """Mean softmax cross entropy of 2-channel logits against a binary mask."""
    gt = np.asarray(gt_mask, dtype=np.float32)
    if logits.ndim != 4 or logits.shape[1] != 2:
        raise ShapeError(f"segmentation logits must be (N,2,H,W), got {logits.shape}")
    if gt.ndim != 4 or gt.shape[1] != 1:
        raise ShapeError(f"ground-truth mask must be (N,1,H,W), got {gt.shape}")
    if gt.shape[0] != logits.shape[0] or gt.shape[2:] != logits.shape[2:]:
        raise ShapeError(f"mask {gt.shape} does not match logits {logits.shape}")
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ValidationError("ground-truth mask must be binary (0/1)")
    target = np.concatenate([1.0 - gt, gt], axis=1)
    return T.softmax_cross_entropy(logits, target)


def predict_mask(logits: Tensor | np.ndarray) -> np.ndarray:
    """Per-pixel argmax over the two logit channels; ties go to background."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.ndim != 4 or data.shape[1] != 2:
        raise ShapeError(f"expected (N,2,H,W) logits, got {data.shape}")
    fg = data[:, 1:2] > data[:, 0:1]
    return fg.astype(np.float32)
