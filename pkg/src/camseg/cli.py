"""Command-line interface.

Verbs: gen-data, train-cls, train-episodic, eval, infer, cam-dump.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, parse_config_text
from .data import (Episode, build_eval_set, build_index, load_image, load_mask,
                   make_folds, render_instance, save_heatmap, save_image,
                   save_mask, stage_splits, write_manifest)
from .errors import (CheckpointError, ConfigError, DataError, NumericalError,
                     ShapeError, ValidationError)
from .train import (AuditLog, classifier_accuracy, evaluate_fold,
                    restore_model, train_classifier, train_episodic)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through exit code 1
        raise UsageError(message)


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--fold", type=int, help="fold index 0..3")
    p.add_argument("--k", type=int, help="shot count")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", default=".", help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="camseg", description="few-shot segmentation by class representation")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", parents=[], help="write the dataset manifest (and sample images)")
    _add_common(p)
    p.add_argument("--export", type=int, default=0, metavar="N",
                   help="export N sample image/mask PNG pairs per class")

    p = sub.add_parser("train-cls", help="stage 1: classifier pretraining")
    _add_common(p)

    p = sub.add_parser("train-episodic", help="stage 2: end-to-end episodic training")
    _add_common(p)
    p.add_argument("--init", required=True, help="stage-1 checkpoint path")

    p = sub.add_parser("eval", help="FB-IoU evaluation on the fold's test classes")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", type=int, help="number of evaluation episodes")

    p = sub.add_parser("infer", help="segment one query from k support pairs")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--support", nargs=2, action="append", metavar=("IMAGE", "MASK"),
                   required=True, help="support image and mask PNG (repeatable)")
    p.add_argument("--query", required=True, help="query image PNG")
    p.add_argument("--mask-out", default="prediction.png", help="output mask path")
    p.add_argument("--prior-out", help="optional prior heatmap path")

    p = sub.add_parser("cam-dump", help="export prior and per-class activation heatmaps")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episode-index", type=int, default=0,
                   help="index into the fold's evaluation episodes")
    return parser


def _resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.fold is not None:
        cfg.fold_index = args.fold
    if args.k is not None:
        cfg.k = args.k
    if args.seed is not None:
        cfg.master_seed = args.seed
    cfg.validate()
    return cfg


def _config_for_checkpoint(args, ckpt: Checkpoint) -> TrainConfig:
    """Prefer an explicit --config; otherwise rebuild from checkpoint metadata."""
    if args.config:
        return _resolve_config(args)
    if "meta.config_text" not in ckpt.tensors:
        raise CheckpointError("checkpoint carries no config metadata; pass --config")
    cfg = parse_config_text(ckpt.tensors["meta.config_text"].tobytes().decode("utf-8"))
    if args.fold is not None:
        cfg.fold_index = args.fold
    if args.k is not None:
        cfg.k = args.k
    if args.seed is not None:
        cfg.master_seed = args.seed
    cfg.validate()
    return cfg


def _cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    index = build_index(cfg.image_size, cfg.train_pool, cfg.test_pool)
    manifest = os.path.join(args.out, "manifest.txt")
    write_manifest(manifest, index)
    print(f"wrote {manifest}")
    if args.export > 0:
        sample_dir = os.path.join(args.out, "samples")
        os.makedirs(sample_dir, exist_ok=True)
        for cls, pools in index.pools.items():
            for seed in pools["train"][: args.export]:
                image, mask = render_instance(cls, seed, cfg.image_size)
                save_image(os.path.join(sample_dir, f"c{cls:02d}_s{seed:03d}_img.png"), image)
                save_mask(os.path.join(sample_dir, f"c{cls:02d}_s{seed:03d}_mask.png"), mask)
        print(f"exported {args.export} sample pair(s) per class to {sample_dir}")
    return 0


def _cmd_train_cls(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    audit = AuditLog()
    index = build_index(cfg.image_size, cfg.train_pool, cfg.test_pool)
    model, ckpt, _ = train_classifier(cfg, audit=audit, index=index, log=print)
    _, _, test_classes = stage_splits(make_folds()[cfg.fold_index])
    audit.check(test_classes, index)
    audit.write(os.path.join(args.out, "audit_cls.txt"))
    path = os.path.join(args.out, "classifier.ckpt")
    save_checkpoint(ckpt, path)
    acc = classifier_accuracy(model, cfg, index)
    print(f"held-out argmax accuracy: {acc:.3f}")
    print(f"wrote {path}")
    return 0


def _cmd_train_episodic(args) -> int:
    cfg = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    init = load_checkpoint(args.init)
    audit = AuditLog()
    index = build_index(cfg.image_size, cfg.train_pool, cfg.test_pool)
    _, ckpt, _ = train_episodic(cfg, init, audit=audit, index=index, log=print)
    _, _, test_classes = stage_splits(make_folds()[cfg.fold_index])
    audit.check(test_classes, index)
    audit.write(os.path.join(args.out, "audit_episodic.txt"))
    path = os.path.join(args.out, "episodic.ckpt")
    save_checkpoint(ckpt, path)
    print(f"wrote {path}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, ckpt)
    os.makedirs(args.out, exist_ok=True)
    model = restore_model(ckpt, cfg)
    report = evaluate_fold(model, cfg, k=cfg.k, n_pairs=args.pairs)
    text_path = os.path.join(args.out, f"report_fold{cfg.fold_index}_k{cfg.k}.txt")
    kv_path = os.path.join(args.out, f"report_fold{cfg.fold_index}_k{cfg.k}.kv")
    with open(text_path, "w", encoding="ascii") as fh:
        fh.write(report.to_text())
    with open(kv_path, "w", encoding="ascii") as fh:
        fh.write(report.to_kv())
    print(report.to_text(), end="")
    print(f"wrote {text_path} and {kv_path}")
    return 0


def _cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, ckpt)
    model = restore_model(ckpt, cfg)
    supports = []
    for img_path, mask_path in args.support:
        supports.append((load_image(img_path), load_mask(mask_path)))
    query = load_image(args.query)
    episode = Episode(class_id=-1, k=len(supports), supports=supports,
                      query_image=query, query_mask=np.zeros_like(query[:1]),
                      support_seeds=(), query_seed=-1)
    maps = model.episode_maps(episode)
    save_mask(args.mask_out, maps["mask"])
    print(f"wrote {args.mask_out}")
    if args.prior_out:
        save_heatmap(args.prior_out, maps["prior"][0])
        print(f"wrote {args.prior_out}")
    return 0


def _cmd_cam_dump(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, ckpt)
    os.makedirs(args.out, exist_ok=True)
    model = restore_model(ckpt, cfg)
    index = build_index(cfg.image_size, cfg.train_pool, cfg.test_pool)
    _, _, test_classes = stage_splits(make_folds()[cfg.fold_index])
    if args.episode_index < 0 or args.episode_index >= cfg.eval_pairs:
        raise UsageError(f"--episode-index must be in 0..{cfg.eval_pairs - 1}")
    eval_set = build_eval_set(index, test_classes, args.episode_index + 1,
                              seed=cfg.eval_seed, k=cfg.k)
    episode = eval_set[args.episode_index]
    maps = model.episode_maps(episode)
    tag = f"ep{args.episode_index:04d}"
    save_image(os.path.join(args.out, f"{tag}_query.png"), episode.query_image)
    save_mask(os.path.join(args.out, f"{tag}_gt.png"), episode.query_mask)
    save_mask(os.path.join(args.out, f"{tag}_pred.png"), maps["mask"])
    save_heatmap(os.path.join(args.out, f"{tag}_prior.png"), maps["prior"][0])
    for c in range(maps["stack"].shape[0]):
        save_heatmap(os.path.join(args.out, f"{tag}_class{c:02d}.png"), maps["stack"][c])
    print(f"wrote {2 + 2 + maps['stack'].shape[0]} files to {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-cls": _cmd_train_cls,
    "train-episodic": _cmd_train_episodic,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "cam-dump": _cmd_cam_dump,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("no command given (try --help)")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DataError, ValidationError, CheckpointError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
