"""Foreground/background IoU and evaluation aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from .data import Episode
from .errors import ShapeError, ValidationError


def _class_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    inter = int(np.count_nonzero(pred & gt))
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        # class absent from both masks: count as a perfect match
        return 1.0
    return inter / union


def fb_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """(IoU of foreground + IoU of background) / 2 for two binary masks."""
    fg, bg = fb_iou_components(pred, gt)
    return 0.5 * (fg + bg)


def fb_iou_components(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    for name, m in (("pred", pred), ("gt", gt)):
        if not np.all((m == 0) | (m == 1)):
            raise ValidationError(f"{name} mask must be binary (0/1)")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return _class_iou(p, g), _class_iou(~p, ~g)


@dataclass
class EpisodeRecord:
    index: int
    class_id: int
    fg_iou: float
    bg_iou: float

    @property
    def fb(self) -> float:
        return 0.5 * (self.fg_iou + self.bg_iou)


@dataclass
class EvalReport:
    k: int
    fold_values: dict[int, float] = field(default_factory=dict)
    records: list[EpisodeRecord] = field(default_factory=list)

    @property
    def mean_fb_iou(self) -> float:
        if not self.fold_values:
            raise ValidationError("report holds no fold results")
        return float(np.mean(sorted(self.fold_values.values())))

    def to_text(self) -> str:
        lines = [f"shots: {self.k}"]
        for fold in sorted(self.fold_values):
            lines.append(f"fold {fold}: FB-IoU {self.fold_values[fold]:.4f}")
        lines.append(f"mean FB-IoU: {self.mean_fb_iou:.4f}")
        lines.append(f"episodes: {len(self.records)}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        lines = ["format = camseg-eval v1", f"k = {self.k}"]
        for fold in sorted(self.fold_values):
            lines.append(f"fold.{fold} = {self.fold_values[fold]:.9f}")
        lines.append(f"mean_fb_iou = {self.mean_fb_iou:.9f}")
        lines.append(f"episodes = {len(self.records)}")
        for r in self.records:
            lines.append(f"episode.{r.index} = {r.class_id} {r.fg_iou:.9f} {r.bg_iou:.9f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, text: str) -> "EvalReport":
        k = None
        folds: dict[int, float] = {}
        records: list[EpisodeRecord] = []
        for ln in text.splitlines():
            ln = ln.strip()
            if not ln or "=" not in ln:
                continue
            key, _, value = ln.partition("=")
            key, value = key.strip(), value.strip()
            if key == "k":
                k = int(value)
            elif key.startswith("fold."):
                folds[int(key[5:])] = float(value)
            elif key.startswith("episode."):
                cid, fg, bg = value.split()
                records.append(EpisodeRecord(index=int(key[8:]), class_id=int(cid),
                                             fg_iou=float(fg), bg_iou=float(bg)))
        if k is None:
            raise ValidationError("eval report text lacks a k entry")
        return cls(k=k, fold_values=folds, records=records)


def merge_reports(reports: Iterable["EvalReport"]) -> "EvalReport":
    """Combine single-fold reports; fold sets must be disjoint, k equal."""
    merged: EvalReport | None = None
    for rep in reports:
        if merged is None:
            merged = EvalReport(k=rep.k)
        if rep.k != merged.k:
            raise ValidationError(f"cannot merge k={rep.k} into k={merged.k} report")
        overlap = set(rep.fold_values) & set(merged.fold_values)
        if overlap:
            raise ValidationError(f"duplicate fold results for {sorted(overlap)}")
        merged.fold_values.update(rep.fold_values)
        merged.records.extend(rep.records)
    if merged is None:
        raise ValidationError("no reports to merge")
    return merged


class EpisodePredictor(Protocol):
    def predict_episode(self, episode: Episode) -> np.ndarray: ...


def evaluate(model: EpisodePredictor, eval_set: list[Episode], k: int,
             fold_index: int = 0) -> EvalReport:
    """Run the model over a fold's evaluation episodes and aggregate FB-IoU.

    Episodes are visited in list order; the fold mean is a 64-bit arithmetic
    mean of per-episode FB-IoU values (episode order cannot change it).
    """
    records: list[EpisodeRecord] = []
    total = 0.0
    for i, ep in enumerate(eval_set):
        if ep.k != k:
            raise ValidationError(f"episode {i} has k={ep.k}, evaluation expects k={k}")
        pred = model.predict_episode(ep)
        fg, bg = fb_iou_components(pred, ep.query_mask)
        records.append(EpisodeRecord(index=i, class_id=ep.class_id, fg_iou=fg, bg_iou=bg))
        total += 0.5 * (fg + bg)
    if not records:
        raise ValidationError("evaluation set is empty")
    return EvalReport(k=k, fold_values={fold_index: total / len(records)}, records=records)
