"""camseg: few-shot segmentation by representing unseen classes with known-class activation maps."""

from .tensor import Tensor, no_grad
from .backbone import Backbone, BackboneConfig
from .cam import CamHead, aggregate_kshot, classification_loss, mask_support, query_prior
from .seg_head import Decoder, gate_features, normalize_prior, predict_mask, seg_loss
from .model import FewShotSegModel, ModelConfig
from .metrics import EvalReport, evaluate, fb_iou
from .config import TrainConfig, load_config
from .optim import Adam

__version__ = "0.1.0"

__all__ = [
    "Adam", "Backbone", "BackboneConfig", "CamHead", "Decoder", "EvalReport",
    "FewShotSegModel", "ModelConfig", "Tensor", "TrainConfig",
    "aggregate_kshot", "classification_loss", "evaluate", "fb_iou",
    "gate_features", "load_config", "mask_support", "no_grad",
    "normalize_prior", "predict_mask", "query_prior", "seg_loss",
]
