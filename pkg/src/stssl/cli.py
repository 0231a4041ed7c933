"""Command-line entry point: ``stssl <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (unknown flag or
config key).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .augment import apply_pipeline
from .config import ConfigError, RunConfig, load_config, parse_config
from .data import SHAPE_CLASSES, SceneConfig, ToyShapeConfig, generate_depth_sequence, generate_toy_shapes
from .evaluation import (
    FinetuneConfig,
    ProbeConfig,
    evaluate,
    export_embeddings,
    extract_features,
    finetune,
    load_embeddings,
    semi_supervised_subset,
    train_linear_probe,
)
from .geometry import PointCloud
from .gradcheck import run_suite
from .model import encoder_from_arrays, load_checkpoint, save_checkpoint
from .rng import RngStream
from .sequence import NaturalPairs, SyntheticPairs
from .train import Pretrainer


class UsageError(Exception):
    pass


def _load_data(path) -> tuple[str, list]:
    """A directory of cloud files, a depth-sequence directory, or a
    directory of depth-sequence directories."""
    path = Path(path)
    if io.is_depth_sequence_dir(path):
        return "sequences", [io.load_depth_sequence(path)]
    subdirs = sorted(p for p in path.iterdir() if p.is_dir() and io.is_depth_sequence_dir(p))
    if subdirs:
        return "sequences", [io.load_depth_sequence(p) for p in subdirs]
    return "clouds", io.load_cloud_dir(path)


def _load_run_config(args) -> RunConfig:
    overrides = {"seed": args.seed} if args.seed is not None else {}
    if getattr(args, "config", None):
        return load_config(args.config, overrides)
    return parse_config("", overrides)


def _encoder_from_checkpoint(path):
    arrays, echo = load_checkpoint(path)
    return encoder_from_arrays(arrays, parse_config(echo).model)


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(args.seed or 0).child("gen-data")
    if args.kind == "shapes":
        cfg = ToyShapeConfig(
            classes=tuple(args.classes.split(",")),
            samples_per_class=args.samples_per_class,
            points_per_shape=args.points,
            noise_sigma=args.noise,
        )
        clouds = generate_toy_shapes(rng, cfg)
        ext = ".pcb" if args.binary else ".xyz"
        for i, c in enumerate(clouds):
            io.save_cloud(c, out / f"shape_{i:05d}{ext}")
        print(f"wrote {len(clouds)} clouds to {out}")
    else:
        cfg = SceneConfig(n_frames=args.frames)
        for s in range(args.sequences):
            io.save_depth_sequence(generate_depth_sequence(rng.child(s), cfg), out / f"seq_{s:03d}")
        print(f"wrote {args.sequences} depth sequences to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_run_config(args)
    kind, items = _load_data(args.data)
    source = NaturalPairs(items, cfg.sampler) if kind == "sequences" else SyntheticPairs(items, cfg.sampler)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.echo()
    trainer = Pretrainer(source, cfg.train, cfg.model, cfg.augment)
    encoder = trainer.run(out / "metrics.log", out, echo)
    save_checkpoint(out / "encoder.ckpt", encoder.named_arrays(), echo)
    save_checkpoint(out / "state_final.ckpt", trainer.state.named_arrays(), echo)
    print(f"trained {cfg.train.steps} steps; encoder written to {out / 'encoder.ckpt'}")
    return 0


def cmd_embed(args) -> int:
    encoder = _encoder_from_checkpoint(args.checkpoint)
    clouds = io.load_cloud_dir(args.data)
    fs = extract_features(encoder, clouds, args.points, seed=args.seed or 0)
    export_embeddings(fs, args.out)
    print(f"wrote {len(fs)} embeddings of width {fs.width} to {args.out}")
    return 0


def cmd_probe(args) -> int:
    seed = args.seed or 0
    if args.finetune:
        if not (args.checkpoint and args.train_data and args.test_data):
            raise UsageError("--finetune needs --checkpoint, --train-data and --test-data")
        encoder = _encoder_from_checkpoint(args.checkpoint)
        train_clouds = io.load_cloud_dir(args.train_data)
        test_clouds = io.load_cloud_dir(args.test_data)
        labels = np.array([c.label for c in train_clouds])
        count = int(max(labels.max(), max(c.label for c in test_clouds))) + 1
        idx = semi_supervised_subset(labels, args.fraction, RngStream(seed).child("subset"), count)
        enc, head = finetune(encoder, [train_clouds[i] for i in idx], count, FinetuneConfig(seed=seed))
        acc = evaluate(head, extract_features(enc, test_clouds, class_count=count))
    else:
        if args.train_embeddings and args.test_embeddings:
            train = load_embeddings(args.train_embeddings)
            test = load_embeddings(args.test_embeddings)
        elif args.checkpoint and args.train_data and args.test_data:
            encoder = _encoder_from_checkpoint(args.checkpoint)
            train = extract_features(encoder, io.load_cloud_dir(args.train_data), seed=seed)
            test = extract_features(encoder, io.load_cloud_dir(args.test_data), seed=seed)
        else:
            raise UsageError("give --train-embeddings/--test-embeddings or --checkpoint/--train-data/--test-data")
        count = max(train.class_count, test.class_count)
        train.class_count = test.class_count = count
        if args.fraction < 1.0:
            train = train.subset(semi_supervised_subset(train.labels, args.fraction, RngStream(seed).child("subset"), count))
        acc = evaluate(train_linear_probe(train, ProbeConfig(seed=seed)), test)
    print(f"accuracy={acc!r}")
    return 0


def cmd_augment_preview(args) -> int:
    cfg = _load_run_config(args).augment
    cloud = io.load_cloud(args.input)
    out = apply_pipeline(cloud, RngStream(args.seed or 0).child("augment-preview"), cfg)
    io.save_cloud(PointCloud(out.points, cloud.label), args.out)
    print(f"wrote {len(out)} points to {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    failed = 0
    for r in run_suite(trials=args.trials, seed=args.seed or 0):
        status = "ok" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status:4} {r.name:28} max_rel_err={r.max_error:.3e} trials={r.trials}")
    return 1 if failed else 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed for every random stream")

    # --seed may appear before or after the subcommand; the action is shared,
    # so its default must stay SUPPRESS (main() fills in None when absent)
    p = argparse.ArgumentParser(prog="stssl", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write procedural shapes or depth sequences")
    g.add_argument("kind", choices=["shapes", "depth"])
    g.add_argument("--out", required=True)
    g.add_argument("--classes", default="sphere,cube-surface,cylinder,torus,cone",
                   help=f"comma-separated subset of {','.join(SHAPE_CLASSES)}")
    g.add_argument("--samples-per-class", type=int, default=100)
    g.add_argument("--points", type=int, default=1024)
    g.add_argument("--noise", type=float, default=0.01)
    g.add_argument("--binary", action="store_true", help="write .pcb instead of .xyz (drops labels)")
    g.add_argument("--frames", type=int, default=250)
    g.add_argument("--sequences", type=int, default=1)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("pretrain", parents=[common], help="self-supervised pre-training")
    t.add_argument("--config", help="flat key = value file")
    t.add_argument("--data", required=True, help="cloud directory or depth-sequence directory")
    t.add_argument("--out", required=True, help="output directory (checkpoints, metrics.log)")
    t.set_defaults(func=cmd_pretrain)

    e = sub.add_parser("embed", parents=[common], help="export global features")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--points", type=int, default=512)
    e.set_defaults(func=cmd_embed)

    r = sub.add_parser("probe", parents=[common], help="linear-probe accuracy")
    r.add_argument("--train-embeddings")
    r.add_argument("--test-embeddings")
    r.add_argument("--checkpoint")
    r.add_argument("--train-data")
    r.add_argument("--test-data")
    r.add_argument("--fraction", type=float, default=1.0, help="labelled fraction of the training set")
    r.add_argument("--finetune", action="store_true", help="train the encoder too (cross-entropy head)")
    r.set_defaults(func=cmd_probe)

    a = sub.add_parser("augment-preview", parents=[common], help="write one augmented copy of a cloud")
    a.add_argument("--input", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.set_defaults(func=cmd_augment_preview)

    c = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient suite")
    c.add_argument("--trials", type=int, default=100)
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on unknown flags
    if not hasattr(args, "seed"):
        args.seed = None
    try:
        return args.func(args)
    except (ConfigError, UsageError) as err:
        print(f"stssl {args.command}: usage error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"stssl {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
