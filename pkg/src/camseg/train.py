"""Two-stage training: classifier pretraining, then episodic end-to-end.

Stage 1 trains the backbone and CAM head on multi-label batches from the
ten classifier classes; images are masked to their foreground with a
configurable probability so the head sees both the plain and the
support-style (background-zeroed) input distribution. Stage 2 trains the
whole network on episodes from the five episodic rehearsal classes, with a
replayed classifier batch keeping the class channels supervised.

Every consumed instance is recorded in an audit log that can be checked
against the fold's test classes after the run.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneConfig
from .cam import classification_loss
from .checkpoint import Checkpoint
from .config import TrainConfig, canonical_text, config_hash
from .data import (DatasetIndex, build_eval_set, build_index, make_folds,
                   render_instance, render_instance_full, sample_episode,
                   stage_splits, _derive_seed, _rng)
from .errors import CheckpointError, DataError, NumericalError
from .metrics import evaluate
from .model import FewShotSegModel, ModelConfig
from .optim import Adam
from .seg_head import seg_loss
from .tensor import Tensor, no_grad

_STAGE1_TAG = 0x57A6E1
_STAGE2_TAG = 0x57A6E2
_REPLAY_TAG = 0x57A6E3
_ACC_TAG = 0x57A6E4


@dataclass
class AuditLog:
    """Every (stage, class_id, instance_seed, split) consumed by training."""

    entries: list[tuple[str, int, int, str]] = field(default_factory=list)

    def record(self, stage: str, class_id: int, instance_seed: int, split: str = "train") -> None:
        self.entries.append((stage, class_id, instance_seed, split))

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for stage, cid, seed, split in self.entries:
                fh.write(f"{stage} {cid} {seed} {split}\n")

    def check(self, test_classes: tuple[int, ...], index: DatasetIndex) -> None:
        """Raise if any training-stage entry touches a test class or pool."""
        test = set(test_classes)
        for stage, cid, seed, split in self.entries:
            if cid in test:
                raise DataError(f"audit: stage {stage} consumed test class {cid}")
            if split != "train" or seed not in index.pool(cid, "train"):
                raise DataError(f"audit: stage {stage} used non-train instance {cid}/{seed}")


def model_from_config(cfg: TrainConfig) -> FewShotSegModel:
    classifier, _, _ = stage_splits(make_folds()[cfg.fold_index])
    mc = ModelConfig(
        backbone=BackboneConfig(stage_channels=tuple(cfg.stage_channels),
                                frozen_stages=cfg.frozen_stages),
        n_classes=len(classifier),
        decoder_hidden=tuple(cfg.decoder_hidden),
        init_seed=cfg.master_seed,
    )
    model = FewShotSegModel(mc)
    model.named_parameters()  # assign stable names
    return model


def pack_checkpoint(model: FewShotSegModel, cfg: TrainConfig, epoch: int,
                    stage: str, optimizer: Adam | None = None) -> Checkpoint:
    ckpt = Checkpoint(epoch=epoch, config_hash=config_hash(cfg))
    for name, p in model.named_parameters().items():
        ckpt.tensors[name] = p.data.copy()
    if optimizer is not None:
        for p, m, v in zip(optimizer.params, optimizer.m, optimizer.v):
            ckpt.tensors[f"opt.m.{p.name}"] = m.copy()
            ckpt.tensors[f"opt.v.{p.name}"] = v.copy()
        ckpt.tensors["opt.t"] = np.array(optimizer.t, dtype=np.int64)
    ckpt.tensors["meta.stage"] = np.frombuffer(stage.encode("ascii"), dtype=np.uint8).copy()
    ckpt.tensors["meta.config_text"] = np.frombuffer(
        canonical_text(cfg).encode("utf-8"), dtype=np.uint8).copy()
    return ckpt


def restore_model(ckpt: Checkpoint, cfg: TrainConfig, require_hash: bool = False) -> FewShotSegModel:
    if require_hash and ckpt.config_hash != config_hash(cfg):
        raise CheckpointError(
            "checkpoint was produced with a different configuration "
            f"(hash {ckpt.config_hash[:12]}.. != {config_hash(cfg)[:12]}..)")
    model = model_from_config(cfg)
    model.load_state(ckpt.tensors)
    return model


def _check_finite(loss: float, stage: str, step: int) -> None:
    if not np.isfinite(loss):
        raise NumericalError(f"{stage} diverged at step {step}: loss = {loss}")


class _ClassifierSampler:
    """Multi-label batches over the classifier classes (channel i = i-th sorted class)."""

    def __init__(self, cfg: TrainConfig, index: DatasetIndex,
                 classes: tuple[int, ...], tag: int):
        self.cfg = cfg
        self.index = index
        self.classes = tuple(sorted(classes))
        self.channel = {c: i for i, c in enumerate(self.classes)}
        self.rng = _rng(cfg.master_seed, tag)

    def batch(self, size: int, audit: AuditLog | None, stage: str) -> tuple[np.ndarray, np.ndarray]:
        images = np.zeros((size, 3, self.index.image_size, self.index.image_size), np.float32)
        labels = -np.ones((size, len(self.classes)), np.float32)
        for b in range(size):
            cls = self.classes[int(self.rng.integers(len(self.classes)))]
            pool = self.index.pool(cls, "train")
            seed = pool[int(self.rng.integers(len(pool)))]
            inst = render_instance_full(cls, seed, self.index.image_size)
            if self.rng.random() < self.cfg.cls_mask_prob:
                images[b] = inst.image * inst.mask
            else:
                images[b] = inst.image
            # distractors are deliberately small; only the foreground family
            # counts as present
            labels[b, self.channel[cls]] = 1.0
            if audit is not None:
                audit.record(stage, cls, seed)
        return images, labels


def train_classifier(cfg: TrainConfig, audit: AuditLog | None = None,
                     index: DatasetIndex | None = None,
                     log=None) -> tuple[FewShotSegModel, Checkpoint, dict]:
    """Stage 1: fit backbone + CAM head with the multi-label logistic loss."""
    cfg.validate()
    index = index or build_index(cfg.image_size, cfg.train_pool, cfg.test_pool)
    classifier, _, _ = stage_splits(make_folds()[cfg.fold_index])
    model = model_from_config(cfg)
    sampler = _ClassifierSampler(cfg, index, classifier, _STAGE1_TAG)
    params = model.trainable_parameters(include_decoder=False)
    opt = Adam(params, lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)

    history: dict = {"loss": [], "lr": []}
    step = 0
    for epoch in range(cfg.cls_epochs):
        opt.lr = cfg.lr_at(epoch)
        epoch_loss = 0.0
        for _ in range(cfg.cls_steps_per_epoch):
            images, labels = sampler.batch(cfg.cls_batch, audit, "cls")
            scores = model.class_scores(Tensor(images))
            loss = classification_loss(scores, labels)
            value = loss.item()
            _check_finite(value, "classifier training", step)
            loss.backward()
            opt.step()
            epoch_loss += value
            step += 1
        history["loss"].append(epoch_loss / cfg.cls_steps_per_epoch)
        history["lr"].append(opt.lr)
        if log:
            log(f"[cls] epoch {epoch}: loss {history['loss'][-1]:.4f} lr {opt.lr:.2e}")
    ckpt = pack_checkpoint(model, cfg, cfg.cls_epochs, "classifier", opt)
    return model, ckpt, history


def classifier_accuracy(model: FewShotSegModel, cfg: TrainConfig,
                        index: DatasetIndex | None = None,
                        per_class: int = 4) -> float:
    """Held-out argmax accuracy of the class weight vector on masked supports.

    Uses test-pool instances of the classifier classes, which neither
    training stage touches.
    """
    index = index or build_index(cfg.image_size, cfg.train_pool, cfg.test_pool)
    classifier, _, _ = stage_splits(make_folds()[cfg.fold_index])
    classes = tuple(sorted(classifier))
    rng = _rng(cfg.master_seed, _ACC_TAG)
    hits = 0
    total = 0
    for channel, cls in enumerate(classes):
        pool = index.pool(cls, "test")
        picks = rng.choice(len(pool), size=min(per_class, len(pool)), replace=False)
        for pick in picks:
            image, mask = render_instance(cls, pool[int(pick)], index.image_size)
            with no_grad():
                scores = model.class_scores(Tensor(image[None]), mask[None])
            hits += int(np.argmax(scores.data[0]) == channel)
            total += 1
    return hits / total


def train_episodic(cfg: TrainConfig, init: Checkpoint, audit: AuditLog | None = None,
                   index: DatasetIndex | None = None,
                   log=None) -> tuple[FewShotSegModel, Checkpoint, dict]:
    """Stage 2: end-to-end episodic training on the rehearsal classes."""
    cfg.validate()
    index = index or build_index(cfg.image_size, cfg.train_pool, cfg.test_pool)
    classifier, episodic, _ = stage_splits(make_folds()[cfg.fold_index])
    model = restore_model(init, cfg, require_hash=True)
    params = model.trainable_parameters(include_decoder=True)
    opt = Adam(params, lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    replay = _ClassifierSampler(cfg, index, classifier, _REPLAY_TAG)

    history: dict = {"seg_loss": [], "cls_loss": [], "lr": []}
    step = 0
    for epoch in range(cfg.epi_epochs):
        opt.lr = cfg.lr_at(epoch)
        seg_sum = 0.0
        cls_sum = 0.0
        for _ in range(cfg.epi_episodes_per_epoch):
            ep_seed = _derive_seed(cfg.master_seed, _STAGE2_TAG, step)
            episode = sample_episode(index, episodic, cfg.k, ep_seed, split="train")
            if audit is not None:
                for s in episode.support_seeds:
                    audit.record("epi", episode.class_id, s)
                audit.record("epi", episode.class_id, episode.query_seed)
            logits, _, _ = model.forward_episode(episode)
            loss_seg = seg_loss(logits, episode.query_mask[None])
            loss = loss_seg
            cls_value = 0.0
            if cfg.cls_weight > 0:
                images, labels = replay.batch(1, audit, "epi-replay")
                loss_cls = classification_loss(model.class_scores(Tensor(images)), labels)
                cls_value = loss_cls.item()
                loss = loss_seg + cfg.cls_weight * loss_cls
            value = loss.item()
            _check_finite(value, "episodic training", step)
            loss.backward()
            opt.step()
            seg_sum += loss_seg.item()
            cls_sum += cls_value
            step += 1
        history["seg_loss"].append(seg_sum / cfg.epi_episodes_per_epoch)
        history["cls_loss"].append(cls_sum / cfg.epi_episodes_per_epoch)
        history["lr"].append(opt.lr)
        if log:
            log(f"[epi] epoch {epoch}: seg {history['seg_loss'][-1]:.4f} "
                f"cls {history['cls_loss'][-1]:.4f} lr {opt.lr:.2e}")
    ckpt = pack_checkpoint(model, cfg, cfg.epi_epochs, "episodic", opt)
    return model, ckpt, history


def evaluate_fold(model: FewShotSegModel, cfg: TrainConfig, k: int | None = None,
                  index: DatasetIndex | None = None, n_pairs: int | None = None):
    """Build the fold's fixed eval episodes and run the FB-IoU protocol."""
    index = index or build_index(cfg.image_size, cfg.train_pool, cfg.test_pool)
    _, _, test_classes = stage_splits(make_folds()[cfg.fold_index])
    k = cfg.k if k is None else k
    eval_set = build_eval_set(index, test_classes, n_pairs or cfg.eval_pairs,
                              seed=cfg.eval_seed, k=k)
    return evaluate(model, eval_set, k, fold_index=cfg.fold_index)
