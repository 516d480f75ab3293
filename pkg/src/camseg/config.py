"""Run configuration: defaults, `key = value` file parsing, canonical hashing."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .errors import ConfigError


@dataclass
class TrainConfig:
    # protocol
    master_seed: int = 42
    fold_index: int = 0
    k: int = 1
    # data
    image_size: int = 64
    train_pool: int = 40
    test_pool: int = 40
    # backbone
    stage_channels: tuple[int, ...] = (16, 32, 64)
    frozen_stages: int = 1
    # cam / seg head
    decoder_hidden: tuple[int, int] = (32, 16)
    cls_weight: float = 1.0
    # optimisation
    lr: float = 1e-4
    lr_decay: float = 0.7
    decay_every_epochs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # stage 1: classifier pretraining
    cls_epochs: int = 30
    cls_steps_per_epoch: int = 500
    cls_batch: int = 4
    cls_mask_prob: float = 0.5
    # stage 2: episodic training
    epi_epochs: int = 40
    epi_episodes_per_epoch: int = 500
    # evaluation
    eval_pairs: int = 1000
    eval_seed: int = 42

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"train.lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.decay_every_epochs < 1:
            raise ConfigError("train.decay_every_epochs must be >= 1")
        if not 0 <= self.fold_index <= 3:
            raise ConfigError(f"fold_index must be in 0..3, got {self.fold_index}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.image_size % 8:
            raise ConfigError(f"data.image_size must be divisible by 8, got {self.image_size}")
        if not 0 <= self.cls_mask_prob <= 1:
            raise ConfigError("train.cls_mask_prob must be in [0, 1]")
        if not 0 <= self.frozen_stages <= len(self.stage_channels):
            raise ConfigError(
                f"backbone.frozen_stages must be in 0..{len(self.stage_channels)}")

    def lr_at(self, epoch: int) -> float:
        """lr(epoch) = lr * decay^floor(epoch / every)."""
        return self.lr * self.lr_decay ** (epoch // self.decay_every_epochs)


# namespaced config-file key -> (dataclass field, parser)
def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


_KEYS: dict[str, tuple[str, type | object]] = {
    "master_seed": ("master_seed", int),
    "fold_index": ("fold_index", int),
    "k": ("k", int),
    "data.image_size": ("image_size", int),
    "data.train_pool": ("train_pool", int),
    "data.test_pool": ("test_pool", int),
    "backbone.stage_channels": ("stage_channels", _int_tuple),
    "backbone.frozen_stages": ("frozen_stages", int),
    "model.decoder_hidden": ("decoder_hidden", _int_tuple),
    "train.cls_weight": ("cls_weight", float),
    "train.lr": ("lr", float),
    "train.lr_decay": ("lr_decay", float),
    "train.decay_every_epochs": ("decay_every_epochs", int),
    "train.adam_beta1": ("adam_beta1", float),
    "train.adam_beta2": ("adam_beta2", float),
    "train.adam_eps": ("adam_eps", float),
    "train.cls_epochs": ("cls_epochs", int),
    "train.cls_steps_per_epoch": ("cls_steps_per_epoch", int),
    "train.cls_batch": ("cls_batch", int),
    "train.cls_mask_prob": ("cls_mask_prob", float),
    "train.epi_epochs": ("epi_epochs", int),
    "train.epi_episodes_per_epoch": ("epi_episodes_per_epoch", int),
    "eval.pairs": ("eval_pairs", int),
    "eval.seed": ("eval_seed", int),
}

_FIELD_TO_KEY = {f: k for k, (f, _) in _KEYS.items()}


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse `key = value` lines (# comments allowed) over the defaults."""
    overrides: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        fname, parser = _KEYS[key]
        try:
            overrides[fname] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    cfg = replace(base or TrainConfig(), **overrides)
    cfg.validate()
    return cfg


def load_config(path: str) -> TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc


def _format_value(value: object) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def canonical_text(cfg: TrainConfig) -> str:
    """Stable serialisation: every key, sorted, one per line."""
    lines = []
    for f in fields(cfg):
        key = _FIELD_TO_KEY[f.name]
        lines.append(f"{key} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(sorted(lines)) + "\n"


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()
