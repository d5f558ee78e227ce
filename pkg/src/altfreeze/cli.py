"""Command-line surface.

Subcommands: ``gen-data`` (synthesize the benchmark), ``train`` (fit a model,
emit checkpoint + CSV log), ``eval`` (per-dataset AUC report), ``partition``
(parameter group table), ``augment`` (apply one fake-clip operation to a
stored clip), and ``cam`` (write activation heatmaps as PGM images).  Every
command is deterministic given its flags, config, and seeds; failures exit
nonzero with a one-line diagnostic.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .augment import clip_blend, default_temporal_count, random_mask, temporal_dropout, temporal_repeat
from .config import parse_config
from .data import (
    KIND_BLEND,
    KIND_TDROP,
    KIND_TREPEAT,
    ClipDataset,
    build_spatial_set,
    build_temporal_set,
    build_training_set,
    build_validation_set,
)
from .metrics import run_eval
from .model import build_model, cam
from .partition import classify_param, partition_report
from .persist import (
    TAG_GROUPS,
    CheckpointState,
    load_checkpoint,
    load_dataset,
    restore_model,
    save_checkpoint,
    save_dataset,
    save_manifest,
    write_eval_report,
    write_metric_log,
    write_pgm,
)
from .trainer import Trainer


def _cmd_gen_data(args) -> int:
    cfg = parse_config(args.config)
    data_spec = cfg.data
    if args.seed is not None:
        from dataclasses import replace

        data_spec = replace(data_spec, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    outputs = [
        ("train", build_training_set(data_spec)),
        ("temporal_probe", build_temporal_set(data_spec)),
        ("spatial_probe", build_spatial_set(data_spec)),
    ]
    if data_spec.val_real + data_spec.val_fake > 0:
        outputs.append(("val", build_validation_set(data_spec)))
    for name, ds in outputs:
        path = os.path.join(args.out, f"{name}.vclp")
        save_dataset(ds, path)
        save_manifest(ds, os.path.join(args.out, f"{name}.manifest.txt"))
        print(f"wrote {path} ({len(ds)} clips)")
    return 0


def _load_train_file(path: str) -> ClipDataset:
    if os.path.isdir(path):
        path = os.path.join(path, "train.vclp")
    return load_dataset(path)


def _cmd_train(args) -> int:
    cfg = parse_config(args.config)
    dataset = _load_train_file(args.data)
    if args.resume:
        raw = load_checkpoint(args.resume)
        model = restore_model(raw, cfg.model)
        trainer = Trainer(model, dataset, cfg.train)
        trainer.restore(
            raw.state.counter, raw.state.iteration, raw.momentum_entries(), raw.state.rng_state()
        )
    else:
        model = build_model(cfg.model, seed=cfg.train.seed)
        trainer = Trainer(model, dataset, cfg.train)
    trainer.run()
    state = CheckpointState.from_rng(
        trainer.counter, trainer.iteration, trainer.iteration // trainer.iters_per_epoch,
        cfg.train.seed, trainer.base_rng,
    )
    save_checkpoint(model, state, args.out, momentum=trainer.momentum_arrays())
    if args.log:
        write_metric_log(trainer.rows, args.log, config_echo=cfg.echo)
    final_loss = trainer.rows[-1]["loss"] if trainer.rows else float("nan")
    print(f"trained {trainer.iteration} iterations, final loss {final_loss:.6f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = parse_config(args.config)
    raw = load_checkpoint(args.ckpt)
    model = restore_model(raw, cfg.model)
    datasets = []
    for item in args.data:
        if "=" not in item:
            raise ValueError(f"--data expects NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        datasets.append((name, load_dataset(path)))
    report = run_eval(model, datasets)
    write_eval_report(report, args.out, scores_path=args.scores)
    for name, value in report.aucs.items():
        print(f"{name}: auc={value:.4f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_partition(args) -> int:
    if args.ckpt:
        raw = load_checkpoint(args.ckpt)
        entries = [
            (name, tuple(arr.shape), TAG_GROUPS[tag]) for name, tag, arr in raw.param_entries()
        ]
    else:
        cfg = parse_config(args.config)
        model = build_model(cfg.model, seed=cfg.train.seed)
        entries = [
            (named.name, named.shape, classify_param(named)) for named, _ in model.named_params()
        ]
    print(partition_report(entries))
    return 0


def _cmd_augment(args) -> int:
    ds = load_dataset(args.infile)
    if not 0 <= args.index < len(ds):
        raise ValueError(f"--index {args.index} out of range for {len(ds)} clips")
    clip = ds.clips[args.index]
    rng = np.random.default_rng([args.seed])
    length = clip.shape[1]
    if args.op == "tdrop":
        count = default_temporal_count(length, rng)
        idx = sorted(int(i) for i in rng.choice(length, size=count, replace=False))
        out, kind = temporal_dropout(clip, idx), KIND_TDROP
    elif args.op == "trepeat":
        count = default_temporal_count(length, rng)
        idx = sorted(int(i) for i in rng.choice(length, size=count, replace=False))
        out, kind = temporal_repeat(clip, idx), KIND_TREPEAT
    else:
        bg_index = args.bg_index if args.bg_index is not None else (args.index + 1) % len(ds)
        if bg_index == args.index:
            raise ValueError("blend needs a background clip different from --index")
        mask = random_mask(clip.shape[2], clip.shape[3], rng)
        out, kind = clip_blend(clip, ds.clips[bg_index], mask), KIND_BLEND
    result = ClipDataset(
        clips=out[np.newaxis].astype(np.float32),
        labels=np.asarray([1], dtype=np.uint8),
        kinds=np.asarray([kind], dtype=np.uint8),
        ids=np.asarray([ds.ids[args.index]], dtype=np.uint32),
    )
    save_dataset(result, args.out)
    print(f"applied {args.op} to clip {args.index}, wrote {args.out}")
    return 0


def _cmd_cam(args) -> int:
    cfg = parse_config(args.config)
    raw = load_checkpoint(args.ckpt)
    model = restore_model(raw, cfg.model)
    ds = load_dataset(args.infile)
    if not 0 <= args.index < len(ds):
        raise ValueError(f"--index {args.index} out of range for {len(ds)} clips")
    heat = cam(model, ds.clips[args.index])
    if args.frames == "all":
        frame_ids = list(range(heat.shape[0]))
    else:
        frame_ids = [int(t) for t in args.frames.split(",")]
        for t in frame_ids:
            if not 0 <= t < heat.shape[0]:
                raise ValueError(f"frame {t} out of range for heatmap length {heat.shape[0]}")
    for t in frame_ids:
        img = np.round(heat[t] * 255.0).astype(np.uint8)
        path = f"{args.out_prefix}_f{t:02d}.pgm"
        write_pgm(img, path)
        print(f"wrote {path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="altfreeze",
        description="Alternating spatial/temporal weight freezing on a synthetic forgery benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark datasets")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override data_seed")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model, write checkpoint and CSV log")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="train.vclp file or directory containing it")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="metric log CSV path")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on named datasets")
    p.add_argument("--config", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--scores", default=None, help="per-clip score dump CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("partition", help="print the parameter group table")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_partition)

    p = sub.add_parser("augment", help="apply one fake-clip operation to a stored clip")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--op", choices=("tdrop", "trepeat", "blend"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bg-index", type=int, default=None, help="background clip for blend")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("cam", help="write activation heatmaps as PGM images")
    p.add_argument("--config", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--frames", default="all", help="'all' or comma-separated frame indices")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_cam)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
