"""Command-line entry points: train, merge, eval, gradcheck.

Exit codes: 0 ok, 1 gradient check failed, 2 configuration error, 3 data
error, 4 numerical abort. Every error path prints one line starting with
``error[<kind>]:``.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import gradsuite
from .imaging import ImageFormatError, capped, hdr_psnr, hdr_scale, normalize, read_pfm, tonemap_mu, write_pfm, write_ppm
from .model import ModelConfig, config_from_params, merge_frame_set
from .numerics import checkpoint
from .numerics.checkpoint import CheckpointError
from .training import (
    FramePolicy,
    NumericalAbort,
    SceneError,
    TrainConfig,
    evaluate,
    find_scene_dirs,
    ingest_scene_dir,
    synthetic_pool,
    train,
)

EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


KIND = {EXIT_CONFIG: "config", EXIT_DATA: "data", EXIT_NUMERIC: "numeric", EXIT_GRADCHECK: "gradcheck"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error[config]: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


@dataclass
class RunConfig:
    """Validated arguments of one command."""

    command: str
    args: argparse.Namespace


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _frames(text: str) -> str:
    try:
        FramePolicy.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None
    return text


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flexhdr", description="Flexible multi-exposure HDR merging.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model and write a checkpoint plus metrics CSV")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", action="store_true", help="procedurally generated scenes")
    src.add_argument("--data", help="directory of scene directories")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="metrics CSV (default: checkpoint path with .csv)")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--crop", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--lr-schedule", choices=("constant", "cosine"), default="constant")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--frames", type=_frames, default="fixed:3", help="fixed:<n> or any")
    t.add_argument("--exposure", choices=("learned", "fixed"), default="learned")
    t.add_argument("--align-uncertainty", type=_on_off, default=True, metavar="{on,off}")
    t.add_argument("--fusion", choices=("maxpool", "concat"), default="maxpool")
    t.add_argument("--flow-iters", type=int, default=16)
    t.add_argument("--channels", type=int, default=64)
    t.add_argument("--rdb-layers", type=int, default=4)
    t.add_argument("--rdb-growth", type=int, default=16)
    t.add_argument("--scenes", type=int, default=16, help="synthetic training scenes")
    t.add_argument("--size", type=int, default=64, help="synthetic scene size")
    t.add_argument("--motion", choices=("none", "translation", "mixed"), default="mixed")
    t.add_argument("--val", type=int, default=0, help="held-out synthetic validation scenes")
    t.add_argument("--ckpt-every", type=int, default=50)
    t.add_argument("--val-every", type=int, default=50)
    t.add_argument("--quiet", action="store_true")

    m = sub.add_parser("merge", help="merge one scene directory into an HDR image")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--scene", required=True)
    m.add_argument("--out", required=True, help="output .pfm (linear HDR)")
    m.add_argument("--ppm", help="optional mu-law tonemapped preview")
    m.add_argument("--ref", type=int, help="reference frame index (default: reference.txt or 0)")
    m.add_argument("--flow-iters", type=int, default=16)

    e = sub.add_parser("eval", help="PSNR-mu / PSNR-L per scene as CSV")
    e.add_argument("--ckpt")
    esrc = e.add_mutually_exclusive_group()
    esrc.add_argument("--data", help="scene directory or directory of scenes")
    esrc.add_argument("--synthetic", type=int, metavar="N", help="N held-out synthetic scenes")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--pred", help="score an existing .pfm against --gt instead of running a model")
    e.add_argument("--gt")
    e.add_argument("--flow-iters", type=int, default=16)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite (float64)")
    g.add_argument("--ops", help="comma-separated check names, e.g. conv2d,warp")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--inject-fault", help="test hook: flip the sign of an op's gradient (conv2d)")
    g.add_argument("--list", action="store_true", help="print check names and exit")
    return p


def _validate(parser, args):
    if args.command == "train":
        for name in ("steps", "batch", "channels", "rdb_layers", "rdb_growth", "scenes", "size", "ckpt_every", "val_every"):
            v = getattr(args, name)
            if v < (0 if name == "steps" else 1):
                parser.error(f"--{name.replace('_', '-')} must be positive, got {v}")
        if args.flow_iters < 0 or args.val < 0:
            parser.error("--flow-iters and --val must be nonnegative")
        if not args.lr > 0:
            parser.error(f"--lr must be positive, got {args.lr}")
        if args.crop < 8:
            parser.error(f"--crop must be at least 8, got {args.crop}")
        if args.synthetic and args.crop > args.size:
            parser.error(f"--crop {args.crop} exceeds synthetic --size {args.size}")
        if args.fusion == "concat" and FramePolicy.parse(args.frames).kind != "fixed":
            parser.error("--fusion concat needs a fixed frame count (--frames fixed:<n>)")
    elif args.command in ("merge", "eval"):
        if args.flow_iters < 0:
            parser.error("--flow-iters must be nonnegative")
        if args.command == "eval":
            if args.pred or args.gt:
                if not (args.pred and args.gt) or args.ckpt:
                    parser.error("--pred needs --gt and excludes --ckpt")
            elif not args.ckpt or (args.data is None and args.synthetic is None):
                parser.error("eval needs --ckpt with --data or --synthetic, or --pred with --gt")
    return RunConfig(args.command, args)


def _load_checkpoint(path, flow_iters):
    try:
        state = checkpoint.load(path)
    except (OSError, CheckpointError) as e:
        raise CliError(EXIT_DATA, f"{path}: cannot read checkpoint ({e})") from None
    try:
        return state, config_from_params(state.params, flow_iters=flow_iters)
    except (KeyError, IndexError, ValueError) as e:
        raise CliError(EXIT_DATA, f"{path}: checkpoint does not describe a model ({e})") from None


def _load_scenes(path):
    try:
        return [ingest_scene_dir(d) for d in find_scene_dirs(path)]
    except SceneError as e:
        raise CliError(EXIT_DATA, str(e)) from None


def run_train(args) -> int:
    policy = FramePolicy.parse(args.frames)
    model = ModelConfig(
        channels=args.channels,
        rdb_layers=args.rdb_layers,
        rdb_growth=args.rdb_growth,
        exposure=args.exposure,
        align_uncertainty=args.align_uncertainty,
        fusion=args.fusion,
        concat_frames=policy.n or 3,
        flow_iters=args.flow_iters,
    )
    log = args.log or os.path.splitext(args.out)[0] + ".csv"
    cfg = TrainConfig(
        model=model, steps=args.steps, batch=args.batch, crop=args.crop, lr=args.lr,
        lr_schedule=args.lr_schedule, seed=args.seed, frames=args.frames,
        ckpt_every=args.ckpt_every, val_every=args.val_every, out=args.out, log=log,
    )
    if args.synthetic:
        n_frames = max(3, policy.n or 3)
        if n_frames > 4:
            raise CliError(EXIT_CONFIG, f"synthetic scenes have at most 4 frames, --frames asks for {policy.n}")
        scenes = synthetic_pool(args.seed, args.scenes, args.size, args.motion, n_frames)
        val = synthetic_pool(args.seed + 50_000, args.val, args.size, args.motion, n_frames) if args.val else []
    else:
        scenes, val = _load_scenes(args.data), []
    state = None
    if args.resume:
        state, resumed_cfg = _load_checkpoint(args.resume, args.flow_iters)
        if resumed_cfg != model:
            raise CliError(EXIT_CONFIG, f"{args.resume}: architecture differs from the requested flags")

    def progress(step, report):
        if not args.quiet and (step % 10 == 0 or step == cfg.steps):
            print(f"step {step} l_total={report.l_total:.5f} l_tm={report.l_tm:.5f} "
                  f"l_phot={report.l_phot:.5f} l_vgg={report.l_vgg:.5f}", file=sys.stderr)

    try:
        state, rows = train(cfg, scenes, val, state=state, on_step=progress)
    except SceneError as e:
        raise CliError(EXIT_DATA, str(e)) from None
    except NumericalAbort as e:
        raise CliError(EXIT_NUMERIC, f"{e}; last good checkpoint kept at {args.out}") from None
    except ValueError as e:
        raise CliError(EXIT_CONFIG, str(e)) from None
    print(f"wrote {args.out} ({state.step} steps) and {log}")
    return 0


def run_merge(args) -> int:
    state, cfg = _load_checkpoint(args.ckpt, args.flow_iters)
    try:
        scene = ingest_scene_dir(args.scene)
    except SceneError as e:
        raise CliError(EXIT_DATA, str(e)) from None
    fs = scene.frame_set
    if args.ref is not None:
        if not 0 <= args.ref < len(fs):
            raise CliError(EXIT_CONFIG, f"--ref {args.ref} out of range for {len(fs)} frames")
        fs.reference_index = args.ref
    try:
        hdr, _ = merge_frame_set(state.params, cfg, fs)
    except ValueError as e:
        raise CliError(EXIT_CONFIG, str(e)) from None
    if not np.isfinite(hdr.radiance).all():
        raise CliError(EXIT_NUMERIC, "merged image is not finite")
    write_pfm(args.out, hdr.radiance)
    if args.ppm:
        write_ppm(args.ppm, tonemap_mu(normalize(hdr.radiance, hdr_scale(hdr.radiance))))
    print(f"wrote {args.out}" + (f" and {args.ppm}" if args.ppm else ""))
    return 0


def run_eval(args) -> int:
    print("scene,psnr_mu,psnr_l")
    if args.pred:
        try:
            pred, gt = read_pfm(args.pred), read_pfm(args.gt)
        except (OSError, ImageFormatError) as e:
            raise CliError(EXIT_DATA, f"cannot read image ({e})") from None
        if pred.shape != gt.shape:
            raise CliError(EXIT_DATA, f"{args.pred}: shape {pred.shape} differs from {args.gt} {gt.shape}")
        mu, lin = hdr_psnr(np.maximum(pred, 0), gt)
        print(f"{os.path.basename(args.pred)},{capped(mu):.4f},{capped(lin):.4f}")
        return 0
    state, cfg = _load_checkpoint(args.ckpt, args.flow_iters)
    if args.data is not None:
        scenes = _load_scenes(args.data)
    else:
        scenes = synthetic_pool(args.seed + 90_000, args.synthetic)
    try:
        rows = evaluate(state.params, cfg, scenes)
    except SceneError as e:
        raise CliError(EXIT_DATA, str(e)) from None
    except ValueError as e:
        raise CliError(EXIT_CONFIG, str(e)) from None
    for name, mu, lin in rows:
        print(f"{name},{mu:.4f},{lin:.4f}")
    print(f"mean,{np.mean([r[1] for r in rows]):.4f},{np.mean([r[2] for r in rows]):.4f}")
    return 0


def run_gradcheck(args) -> int:
    if args.list:
        print("\n".join(gradsuite.all_check_names()))
        return 0
    wanted = {o.strip() for o in args.ops.split(",") if o.strip()} if args.ops else None
    try:
        if args.inject_fault:
            gradsuite.inject_fault(args.inject_fault)
        failures = []

        def report(r):
            print(f"{'ok' if r.ok else 'FAIL'} {r.name} max_rel_err={r.error:.3e} at {r.where} ({r.seconds:.2f}s)")
            if not r.ok:
                failures.append(r)

        gradsuite.run_suite(args.seed, wanted, report)
    except ValueError as e:
        raise CliError(EXIT_CONFIG, str(e)) from None
    finally:
        gradsuite.clear_faults()
    if failures:
        names = "; ".join(f"{r.name} at {r.where}" for r in failures)
        raise CliError(EXIT_GRADCHECK, f"{len(failures)} check(s) failed: {names}")
    return 0


COMMANDS = {"train": run_train, "merge": run_merge, "eval": run_eval, "gradcheck": run_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    run = _validate(parser, parser.parse_args(argv))
    try:
        return COMMANDS[run.command](run.args)
    except CliError as e:
        print(f"error[{KIND[e.code]}]: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
