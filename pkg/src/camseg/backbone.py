"""Small strided CNN feature extractor shared by the support and query paths.

Three stages of {3x3 stride-2 conv, ReLU, 3x3 conv, ReLU} give a factor-8
spatial reduction. The earliest ``frozen_stages`` stages are excluded from
training: their parameters never require gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Conv2d
from .tensor import Tensor


@dataclass
class BackboneConfig:
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (16, 32, 64)
    frozen_stages: int = 1

    @property
    def downsample_factor(self) -> int:
        return 2 ** len(self.stage_channels)

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]

    def validate(self) -> None:
        if not self.stage_channels:
            raise ConfigError("backbone needs at least one stage")
        if not 0 <= self.frozen_stages <= len(self.stage_channels):
            raise ConfigError(
                f"frozen_stages must be in 0..{len(self.stage_channels)}, got {self.frozen_stages}")


class Backbone:
    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.stages: list[tuple[Conv2d, Conv2d]] = []
        in_c = config.in_channels
        for out_c in config.stage_channels:
            down = Conv2d(in_c, out_c, 3, stride=2, padding=1, rng=rng)
            keep = Conv2d(out_c, out_c, 3, stride=1, padding=1, rng=rng)
            self.stages.append((down, keep))
            in_c = out_c
        self.freeze(config.frozen_stages)

    def freeze(self, frozen_stages: int) -> None:
        """Mark the earliest ``frozen_stages`` stages as non-trainable."""
        if not 0 <= frozen_stages <= len(self.stages):
            raise ConfigError(f"frozen_stages out of range: {frozen_stages}")
        self.config.frozen_stages = frozen_stages
        for i, (down, keep) in enumerate(self.stages):
            trainable = i >= frozen_stages
            for conv in (down, keep):
                conv.weight.requires_grad = trainable
                conv.bias.requires_grad = trainable

    def forward(self, image: Tensor) -> Tensor:
        """(N,3,H,W) -> (N,C,H/8,W/8); H and W must divide the factor."""
        factor = self.config.downsample_factor
        if image.ndim != 4 or image.shape[1] != self.config.in_channels:
            raise ShapeError(f"backbone expects (N,{self.config.in_channels},H,W), got {image.shape}")
        h, w = image.shape[2], image.shape[3]
        if h % factor or w % factor:
            raise ShapeError(f"spatial dims {h}x{w} not divisible by downsample factor {factor}")
        x = image
        for down, keep in self.stages:
            x = down(x).relu()
            x = keep(x).relu()
        return x

    __call__ = forward

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (down, keep) in enumerate(self.stages):
            for j, conv in enumerate((down, keep)):
                for pname, p in conv.params().items():
                    out[f"backbone.stage{i}.conv{j}.{pname}"] = p
        return out

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.named_parameters().values() if p.requires_grad]
