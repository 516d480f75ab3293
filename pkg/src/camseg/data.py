"""Procedural shape dataset with the 4-fold episodic protocol.

Twenty shape families play the role of twenty semantic classes. Every
instance is a pure function of (class_id, instance_seed): a coloured shape
on a noisy background that also carries a few small distractor shapes from
*other* families, so telling foreground from "any shape" requires class
information. Masks are exact by construction.

Folds partition the 20 classes into contiguous blocks of five; within a
fold the 15 training classes split further into 10 classifier-pretraining
classes and 5 episodic-training classes. Instance pools for train and test
are disjoint index ranges per class.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import DataError, ValidationError

N_CLASSES = 20
FAMILY_NAMES = [
    "disk", "square", "triangle", "ring", "plus",
    "ellipse", "bar", "diamond", "pentagon", "hexagon",
    "star", "crescent", "tee", "ell", "aitch",
    "u_channel", "frame", "arrow", "staircase", "x_cross",
]

_RENDER_TAG = 0x5EED01
_EPISODE_TAG = 0x5EED02


# -- shape membership ----------------------------------------------------------


def _regular_polygon(qx, qy, sides):
    r = np.hypot(qx, qy)
    phi = np.arctan2(qy, qx)
    step = 2.0 * np.pi / sides
    edge = np.cos(np.pi / sides) / np.cos((phi % step) - np.pi / sides)
    return r <= edge


def _family_mask(family: int, qx: np.ndarray, qy: np.ndarray) -> np.ndarray:
    if family == 0:
        return qx * qx + qy * qy <= 1.0
    if family == 1:
        return np.maximum(np.abs(qx), np.abs(qy)) <= 0.85
    if family == 2:
        return _regular_polygon(qx, qy, 3)
    if family == 3:
        r = np.hypot(qx, qy)
        return (r <= 1.0) & (r >= 0.58)
    if family == 4:
        return ((np.abs(qx) <= 0.32) & (np.abs(qy) <= 1.0)) | \
               ((np.abs(qy) <= 0.32) & (np.abs(qx) <= 1.0))
    if family == 5:
        return qx * qx + (qy / 0.48) ** 2 <= 1.0
    if family == 6:
        return (np.abs(qx) <= 1.0) & (np.abs(qy) <= 0.3)
    if family == 7:
        return np.abs(qx) + np.abs(qy) <= 1.1
    if family == 8:
        return _regular_polygon(qx, qy, 5)
    if family == 9:
        return _regular_polygon(qx, qy, 6)
    if family == 10:
        r = np.hypot(qx, qy)
        phi = np.arctan2(qy, qx)
        t = (phi % (2.0 * np.pi / 5)) / (2.0 * np.pi / 5)
        rim = 1.0 - 0.55 * (1.0 - np.abs(2.0 * t - 1.0))
        return r <= rim
    if family == 11:
        return (np.hypot(qx, qy) <= 1.0) & (np.hypot(qx - 0.5, qy) >= 0.75)
    if family == 12:
        return ((np.abs(qy + 0.7) <= 0.3) & (np.abs(qx) <= 1.0)) | \
               ((np.abs(qx) <= 0.3) & (qy >= -0.7) & (qy <= 1.0))
    if family == 13:
        return ((np.abs(qx + 0.6) <= 0.34) & (np.abs(qy) <= 1.0)) | \
               ((np.abs(qy - 0.66) <= 0.34) & (qx >= -0.6) & (qx <= 1.0))
    if family == 14:
        return ((np.abs(np.abs(qx) - 0.7) <= 0.27) & (np.abs(qy) <= 1.0)) | \
               ((np.abs(qy) <= 0.27) & (np.abs(qx) <= 0.7))
    if family == 15:
        return ((np.abs(np.abs(qx) - 0.7) <= 0.27) & (np.abs(qy) <= 1.0)) | \
               ((np.abs(qy - 0.73) <= 0.27) & (np.abs(qx) <= 0.7))
    if family == 16:
        m = np.maximum(np.abs(qx), np.abs(qy))
        return (m <= 0.85) & (m >= 0.5)
    if family == 17:
        head = (qx >= 0.1) & (qx <= 1.0) & (np.abs(qy) <= 0.8 * (1.0 - qx) / 0.9)
        tail = (np.abs(qy) <= 0.22) & (qx >= -1.0) & (qx <= 0.1)
        return head | tail
    if family == 18:
        out = np.zeros_like(qx, dtype=bool)
        for cx, cy in ((-0.55, 0.55), (0.0, 0.0), (0.55, -0.55)):
            out |= np.maximum(np.abs(qx - cx), np.abs(qy - cy)) <= 0.38
        return out
    if family == 19:
        band = (np.abs(qx - qy) <= 0.4) | (np.abs(qx + qy) <= 0.4)
        return band & (np.maximum(np.abs(qx), np.abs(qy)) <= 0.95)
    raise DataError(f"class_id must be in 0..{N_CLASSES - 1}, got {family}")


def _place(family: int, size: int, cx: float, cy: float, scale: float,
           theta: float, aspect: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    u = (xs + 0.5) / size * 2.0 - 1.0
    v = (ys + 0.5) / size * 2.0 - 1.0
    du, dv = u - cx, v - cy
    ct, st = np.cos(theta), np.sin(theta)
    qx = (ct * du + st * dv) / (scale * aspect)
    qy = (-st * du + ct * dv) / scale
    return _family_mask(family, qx, qy)


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint32)[0])


def _rng(*parts: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(parts))))


@dataclass
class RenderedInstance:
    image: np.ndarray          # (3, S, S) float32 in [0, 1]
    mask: np.ndarray           # (1, S, S) float32 in {0, 1}
    present_families: tuple[int, ...]  # foreground family + visible distractors


def render_instance_full(class_id: int, instance_seed: int, size: int = 64) -> RenderedInstance:
    if not 0 <= class_id < N_CLASSES:
        raise DataError(f"class_id must be in 0..{N_CLASSES - 1}, got {class_id}")
    if size % 8:
        raise DataError(f"image size must be divisible by 8, got {size}")
    rng = _rng(_RENDER_TAG, class_id, instance_seed)

    # draw foreground geometry until the coverage contract holds
    fg = None
    scale = float(rng.uniform(0.42, 0.72))
    for _ in range(10):
        cx, cy = rng.uniform(-0.2, 0.2, size=2)
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        aspect = float(rng.uniform(0.85, 1.18))
        cand = _place(class_id, size, cx, cy, scale, theta, aspect)
        frac = cand.mean()
        if 0.05 <= frac <= 0.60:
            fg = cand
            break
        scale = scale * (1.35 if frac < 0.05 else 0.75)
    if fg is None:
        fg = _place(class_id, size, 0.0, 0.0, 0.62, 0.0, 1.0)

    # background: flat colour + low-frequency blotches + pixel noise
    base = rng.uniform(0.12, 0.45, size=3).astype(np.float32)
    low = np.kron(rng.normal(0.0, 0.09, size=(3, size // 8, size // 8)),
                  np.ones((8, 8))).astype(np.float32)
    img = base[:, None, None] + low + rng.normal(0.0, 0.03, size=(3, size, size)).astype(np.float32)

    present = [class_id]
    n_distract = int(rng.integers(2, 5))
    min_visible = max(4, int(0.0025 * size * size))
    for _ in range(n_distract):
        fam = int(rng.integers(0, N_CLASSES - 1))
        if fam >= class_id:
            fam += 1  # never the foreground family
        dcx, dcy = rng.uniform(-0.8, 0.8, size=2)
        dmask = _place(fam, size, dcx, dcy, float(rng.uniform(0.10, 0.18)),
                       float(rng.uniform(0.0, 2.0 * np.pi)), 1.0)
        visible = dmask & ~fg
        color = rng.uniform(0.2, 0.95, size=3).astype(np.float32)
        img = np.where(visible[None], color[:, None, None], img)
        if visible.sum() >= min_visible:
            present.append(fam)

    fg_color = rng.uniform(0.35, 1.0, size=3).astype(np.float32)
    texture = rng.normal(0.0, 0.04, size=(3, size, size)).astype(np.float32)
    fg_pixels = np.clip(fg_color[:, None, None] + texture, 0.05, 1.0)
    img = np.where(fg[None], fg_pixels, np.clip(img, 0.0, 1.0)).astype(np.float32)

    return RenderedInstance(
        image=img,
        mask=fg[None].astype(np.float32),
        present_families=tuple(dict.fromkeys(present)),
    )


def render_instance(class_id: int, instance_seed: int, size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic (image, exact binary mask) pair for one instance."""
    inst = render_instance_full(class_id, instance_seed, size)
    return inst.image, inst.mask


# -- folds and splits ----------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    test_classes: tuple[int, ...]
    train_classes: tuple[int, ...]


def make_folds() -> list[FoldSplit]:
    """Four folds; fold i holds classes 5i..5i+4 out for testing."""
    folds = []
    for i in range(4):
        test = tuple(range(5 * i, 5 * i + 5))
        train = tuple(c for c in range(N_CLASSES) if c not in test)
        folds.append(FoldSplit(fold_index=i, test_classes=test, train_classes=train))
    return folds


def stage_splits(fold: FoldSplit) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    """(classifier classes, episodic-train classes, test classes) for a fold.

    The 15 training classes fall into three contiguous 5-class blocks; the
    two lowest-indexed blocks feed classifier pretraining, the remaining
    block provides the episodic rehearsal classes.
    """
    blocks = sorted({c // 5 for c in fold.train_classes})
    classifier = tuple(c for c in fold.train_classes if c // 5 in blocks[:2])
    episodic = tuple(c for c in fold.train_classes if c // 5 == blocks[2])
    return classifier, episodic, fold.test_classes


# -- dataset index and episodes --------------------------------------------------


@dataclass
class DatasetIndex:
    image_size: int = 64
    pools: dict[int, dict[str, list[int]]] = field(default_factory=dict)

    def pool(self, class_id: int, split: str) -> list[int]:
        try:
            return self.pools[class_id][split]
        except KeyError:
            raise DataError(f"no {split!r} pool for class {class_id}") from None


def build_index(image_size: int = 64, train_pool: int = 40, test_pool: int = 40) -> DatasetIndex:
    """Instance seed pools per class; train and test ranges are disjoint."""
    pools = {
        c: {
            "train": list(range(train_pool)),
            "test": list(range(train_pool, train_pool + test_pool)),
        }
        for c in range(N_CLASSES)
    }
    return DatasetIndex(image_size=image_size, pools=pools)


@dataclass
class Episode:
    class_id: int
    k: int
    supports: list[tuple[np.ndarray, np.ndarray]]
    query_image: np.ndarray
    query_mask: np.ndarray
    support_seeds: tuple[int, ...]
    query_seed: int


def sample_episode(index: DatasetIndex, classes: tuple[int, ...] | list[int], k: int,
                   rng_seed: int, split: str = "train") -> Episode:
    """Deterministic episode: one class, k supports, one distinct query."""
    if k < 1:
        raise ValidationError(f"shot count must be >= 1, got {k}")
    if not classes:
        raise ValidationError("episode class list is empty")
    rng = _rng(_EPISODE_TAG, rng_seed)
    class_id = int(classes[int(rng.integers(0, len(classes)))])
    pool = index.pool(class_id, split)
    if len(pool) < k + 1:
        raise DataError(f"class {class_id} {split} pool holds {len(pool)} instances, need {k + 1}")
    q_pos = int(rng.integers(0, len(pool)))
    query_seed = pool[q_pos]
    remaining = pool[:q_pos] + pool[q_pos + 1:]
    support_seeds = tuple(remaining[i] for i in rng.choice(len(remaining), size=k, replace=False))

    supports = [render_instance(class_id, s, index.image_size) for s in support_seeds]
    query_image, query_mask = render_instance(class_id, query_seed, index.image_size)
    return Episode(class_id=class_id, k=k, supports=supports,
                   query_image=query_image, query_mask=query_mask,
                   support_seeds=support_seeds, query_seed=query_seed)


def build_eval_set(index: DatasetIndex, test_classes: tuple[int, ...] | list[int],
                   n_pairs: int = 1000, seed: int = 42, k: int = 1) -> list[Episode]:
    """The fixed evaluation episodes: reproducible given the seed."""
    return [
        sample_episode(index, test_classes, k,
                       rng_seed=_derive_seed(seed, 0xE7A1, i), split="test")
        for i in range(n_pairs)
    ]


# -- file I/O -------------------------------------------------------------------


def save_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    """Binary mask -> 8-bit grayscale PNG with 0/255 encoding."""
    arr = np.asarray(mask)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValidationError(f"mask must be (H,W) or (1,H,W), got {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValidationError("mask must be binary (0/1)")
    Image.fromarray((arr * 255).astype(np.uint8), mode="L").save(path)


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Read a 0/255 grayscale PNG back into a (1,H,W) float32 binary mask."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read mask file {os.fspath(path)!r}: {exc}") from exc
    if not np.all((arr == 0) | (arr == 255)):
        raise ValidationError(f"mask file {os.fspath(path)!r} has non-binary gray levels")
    return (arr == 255).astype(np.float32)[None]


def save_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """(3,H,W) float image in [0,1] -> RGB PNG."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValidationError(f"image must be (3,H,W), got {arr.shape}")
    hwc = np.clip(arr, 0.0, 1.0).transpose(1, 2, 0)
    Image.fromarray((hwc * 255).round().astype(np.uint8), mode="RGB").save(path)


def load_image(path: str | os.PathLike) -> np.ndarray:
    """RGB PNG -> (3,H,W) float32 in [0,1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image file {os.fspath(path)!r}: {exc}") from exc
    return arr.transpose(2, 0, 1).copy()


def save_heatmap(path: str | os.PathLike, values: np.ndarray) -> None:
    """Min-max scale an arbitrary 2-d map into an 8-bit grayscale PNG."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValidationError(f"heatmap must be 2-d, got shape {arr.shape}")
    lo, hi = arr.min(), arr.max()
    scaled = np.zeros_like(arr) + 0.5 if hi - lo < 1e-12 else (arr - lo) / (hi - lo)
    Image.fromarray((scaled * 255).round().astype(np.uint8), mode="L").save(path)


def write_manifest(path: str | os.PathLike, index: DatasetIndex) -> None:
    """Line-oriented dataset index: one (class_id, instance_seed, split) per line."""
    lines = ["# camseg dataset manifest v1", f"image_size {index.image_size}"]
    for class_id in sorted(index.pools):
        for split in ("train", "test"):
            for seed in index.pools[class_id][split]:
                lines.append(f"{class_id} {seed} {split}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str | os.PathLike) -> DatasetIndex:
    try:
        with open(path, encoding="ascii") as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise DataError(f"cannot read manifest {os.fspath(path)!r}: {exc}") from exc
    index = DatasetIndex(pools={})
    for ln in lines:
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if parts[0] == "image_size":
            index.image_size = int(parts[1])
            continue
        if len(parts) != 3 or parts[2] not in ("train", "test"):
            raise DataError(f"bad manifest line: {ln!r}")
        class_id, seed, split = int(parts[0]), int(parts[1]), parts[2]
        index.pools.setdefault(class_id, {"train": [], "test": []})[split].append(seed)
    return index
