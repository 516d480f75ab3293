"""The composed two-branch network.

A single backbone and a single CAM head serve both branches: the support
branch turns masked supports into a class weight vector, the query branch
turns the query image into a refined class stack, and their combination
gates the query features ahead of the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig
from .cam import CamHead, aggregate_kshot, mask_support, query_prior
from .data import Episode
from .errors import ShapeError
from .seg_head import Decoder, gate_features, normalize_prior, predict_mask
from .tensor import Tensor, no_grad


@dataclass
class ModelConfig:
    backbone: BackboneConfig
    n_classes: int = 10
    decoder_hidden: tuple[int, int] = (32, 16)
    init_seed: int = 0


class FewShotSegModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        root = np.random.SeedSequence([0xCA45E6, config.init_seed])
        rng_backbone, rng_cam, rng_dec = (np.random.Generator(np.random.PCG64(s))
                                          for s in root.spawn(3))
        self.backbone = Backbone(config.backbone, rng_backbone)
        self.cam = CamHead(config.backbone.out_channels, config.n_classes, rng_cam)
        self.decoder = Decoder(config.backbone.out_channels, rng_dec,
                               hidden=config.decoder_hidden)

    # -- parameters -----------------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.backbone.named_parameters())
        out.update(self.cam.named_parameters())
        out.update(self.decoder.named_parameters())
        for name, p in out.items():
            p.name = name
        return out

    def trainable_parameters(self, include_decoder: bool = True) -> list[Tensor]:
        params = self.backbone.trainable_parameters() + self.cam.trainable_parameters()
        if include_decoder:
            params += self.decoder.trainable_parameters()
        return params

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters().items()}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        """Copy parameter arrays in by name; shapes must match exactly."""
        from .errors import CheckpointError

        params = self.named_parameters()
        for name, p in params.items():
            if name not in tensors:
                raise CheckpointError(f"checkpoint is missing tensor {name!r}")
            arr = tensors[name]
            if tuple(arr.shape) != p.shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {tuple(arr.shape)}, model expects {p.shape}")
            p.data = np.array(arr, dtype=np.float32)
        for name in tensors:
            if name not in params and not name.startswith(("opt.", "meta.")):
                raise CheckpointError(f"unknown tensor name {name!r} in checkpoint")

    # -- branch computations ----------------------------------------------------

    def class_scores(self, image: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """Support-path weight vector: mask (optional), backbone, head, pooling."""
        x = mask_support(image, mask) if mask is not None else image
        refined = self.cam(self.backbone(x))
        return self.cam.class_weights(refined)

    def support_weights(self, supports: list[tuple[np.ndarray, np.ndarray]]) -> Tensor:
        """Mean class weight vector over the k masked supports."""
        vectors = [self.class_scores(Tensor(img[None]), msk[None]) for img, msk in supports]
        return aggregate_kshot(vectors)

    def query_logits(self, query_image: Tensor, weights: Tensor) -> tuple[Tensor, Tensor]:
        """Query branch: returns (logits, normalised prior)."""
        feature = self.backbone(query_image)
        refined = self.cam(feature)
        prior = normalize_prior(query_prior(refined, weights))
        gated = gate_features(feature, prior)
        return self.decoder(gated), prior

    def forward_episode(self, episode: Episode) -> tuple[Tensor, Tensor, Tensor]:
        """(logits, normalised prior, class weights) for one episode."""
        weights = self.support_weights(episode.supports)
        logits, prior = self.query_logits(Tensor(episode.query_image[None]), weights)
        return logits, prior, weights

    def predict_episode(self, episode: Episode) -> np.ndarray:
        """Inference-only binary mask (1,H,W) for the episode's query."""
        with no_grad():
            logits, _, _ = self.forward_episode(episode)
        return predict_mask(logits)[0]

    def episode_maps(self, episode: Episode) -> dict[str, np.ndarray]:
        """Forward pass keeping the intermediate maps, for export/debugging."""
        with no_grad():
            weights = self.support_weights(episode.supports)
            feature = self.backbone(Tensor(episode.query_image[None]))
            refined = self.cam(feature)
            raw_prior = query_prior(refined, weights)
            prior = normalize_prior(raw_prior)
            gated = gate_features(feature, prior)
            logits = self.decoder(gated)
        return {
            "weights": weights.data[0],
            "stack": refined.data[0],
            "prior_raw": raw_prior.data[0],
            "prior": prior.data[0],
            "logits": logits.data[0],
            "mask": predict_mask(logits)[0],
        }
