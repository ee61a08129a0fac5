"""Command line entry point: ``uwnerf <command> ...``.

``train`` and ``finetune`` accept any TrainConfig key as a flag
(``--steps 2000 --dim 32``); flags win over values from ``--config``.
"""

import argparse
import dataclasses
import logging
import os
import sys

import torch

from .data_io import load_scene, make_toy_scene, read_key_value, write_scene
from .evaluation import evaluate_scene, render_sequence, render_view, save_rendered
from .trainer import (
    TrainConfig,
    TrainState,
    finetune,
    load_checkpoint,
    save_checkpoint,
    state_from_checkpoint,
    train,
)

CHECKPOINT_NAME = "checkpoint.uwn"
LOG_NAME = "train_log.jsonl"

logger = logging.getLogger("uwnerf")


def _parse_overrides(extra):
    """Turn ``--key value`` / ``--key=value`` leftovers into config overrides."""
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    overrides, i = {}, 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--"):
            raise SystemExit(f"unexpected argument {token!r}")
        key, _, value = token[2:].partition("=")
        key = key.replace("-", "_")
        if key not in names:
            raise SystemExit(f"unknown option --{key.replace('_', '-')}")
        if not value:
            if i + 1 >= len(extra):
                raise SystemExit(f"--{key} needs a value")
            value = extra[i + 1]
            i += 1
        overrides[key] = value
        i += 1
    return overrides


def _build_config(config_file, overrides, base=None, deterministic=False):
    values = read_key_value(config_file) if config_file else {}
    values.update(overrides)
    if deterministic:
        values["dtype"] = "float64"
    return TrainConfig.from_strings(values, base=base)


def _set_deterministic(enabled):
    if enabled:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def cmd_make_toy(args, extra):
    dataset, _ = make_toy_scene(n_views=args.views, size=args.size, seed=args.seed)
    write_scene(args.out, dataset)
    print(f"wrote {len(dataset)} views of {args.size}x{args.size} to {args.out}")


def _run_training(state, dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, LOG_NAME), "a", encoding="utf-8") as log:
        state, reports = train(dataset, state=state, log_file=log)
    path = os.path.join(out_dir, CHECKPOINT_NAME)
    save_checkpoint(path, state)
    last = reports[-1].total if reports else float("nan")
    print(f"step {state.step}: total loss {last:.6g}; checkpoint {path}")


def cmd_train(args, extra):
    _set_deterministic(args.deterministic)
    dataset = load_scene(args.scene)
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        config = _build_config(args.config, _parse_overrides(extra), TrainConfig(**ckpt.config), args.deterministic)
        state = state_from_checkpoint(ckpt, config)
    else:
        config = _build_config(args.config, _parse_overrides(extra), deterministic=args.deterministic)
        state = TrainState(config, dataset.image_shape)
    _run_training(state, dataset, args.out)


def cmd_finetune(args, extra):
    _set_deterministic(args.deterministic)
    dataset = load_scene(args.scene)
    ckpt = load_checkpoint(args.ckpt)
    stored = TrainConfig(**ckpt.config)
    base = TrainConfig.finetune_defaults(
        **{k: v for k, v in dataclasses.asdict(stored).items() if k not in ("steps", "rays_per_batch", "lr_backbone", "lr_model")}
    )
    config = _build_config(args.config, _parse_overrides(extra), base, args.deterministic)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, LOG_NAME), "a", encoding="utf-8") as log:
        result = finetune(ckpt, dataset, config, log_file=log)
    path = os.path.join(args.out, CHECKPOINT_NAME)
    save_checkpoint(path, result)
    print(f"fine-tuned to step {result.step}; checkpoint {path}")


def _target_index(dataset, pose_id):
    if pose_id in dataset.view_ids:
        return dataset.index_of(pose_id)
    try:
        index = int(pose_id)
    except ValueError:
        raise SystemExit(f"unknown pose id {pose_id!r}") from None
    if not 0 <= index < len(dataset):
        raise SystemExit(f"pose index {index} out of range (scene has {len(dataset)} views)")
    return index


def cmd_render(args, extra):
    dataset = load_scene(args.scene)
    ckpt = load_checkpoint(args.ckpt)
    index = _target_index(dataset, args.pose_id)
    rendered = render_view(ckpt, dataset, index)
    paths = save_rendered(args.out, rendered, prefix=f"{os.path.splitext(str(dataset.view_ids[index]))[0]}_", bits=args.bits)
    print("\n".join(paths.values()))


def cmd_eval(args, extra):
    dataset = load_scene(args.scene)
    ckpt = load_checkpoint(args.ckpt)
    indices = [_target_index(dataset, v) for v in args.views.split(",")] if args.views else None
    scene_id = os.path.basename(os.path.normpath(args.scene))
    report = evaluate_scene(ckpt, dataset, indices, args.out, args.external_scores, scene_id)
    print(report.summary_table())


def cmd_sequence(args, extra):
    dataset = load_scene(args.scene)
    ckpt = load_checkpoint(args.ckpt)
    written = render_sequence(ckpt, dataset, args.frames, args.out, bits=args.bits)
    print(f"wrote {len(written)} frames to {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="uwnerf", description="Underwater scene restoration with a neural radiance field.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="write a procedural underwater toy scene")
    p.add_argument("--views", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_toy, accepts_overrides=False)

    p = sub.add_parser("train", help="train on a scene; extra --key value flags override config keys")
    p.add_argument("--scene", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--deterministic", action="store_true", help="double precision and deterministic kernels")
    p.set_defaults(func=cmd_train, accepts_overrides=True)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on a new scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_finetune, accepts_overrides=True)

    p = sub.add_parser("render", help="render one view and its component maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--pose-id", required=True, help="view index or image name")
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=(8, 16), default=8, help="bit depth of T_D, T_B and A maps")
    p.set_defaults(func=cmd_render, accepts_overrides=False)

    p = sub.add_parser("eval", help="score views and write a JSONL report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--views", help="comma-separated view indices or names (default: all)")
    p.add_argument("--external-scores", help="file of 'view_id score' lines from an external perceptual metric")
    p.set_defaults(func=cmd_eval, accepts_overrides=False)

    p = sub.add_parser("sequence", help="render a fly-through along the camera path")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.set_defaults(func=cmd_sequence, accepts_overrides=False)
    return parser


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and not args.accepts_overrides:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args, extra)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
