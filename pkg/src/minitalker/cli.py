"""Command-line interface.

Subcommands: synth-data, annotate, pretrain-inversion, train-style-e,
train-style-a, generate, eval. Exit codes: 0 success, 2 config error,
3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import annotation, coeffspace, metrics, pipeline
from .config import RunConfig
from .errors import ConfigError, DataError, MiniTalkerError


def _load_run_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.from_json(args.config)
    else:
        cfg = RunConfig()
    for name in ("corpus", "records", "out"):
        value = getattr(args, name, None)
        if value:
            setattr(cfg, f"{name}_dir", str(value))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_synth_data(args):
    pipeline.synth_data(
        args.out,
        num_videos=args.videos,
        frames_per_video=args.frames,
        seed=args.seed if args.seed is not None else 0,
        resolution=args.resolution,
        d_exp=args.d_exp,
    )
    print(f"wrote {args.videos} videos to {args.out}")


def cmd_annotate(args):
    try:
        levels = tuple(float(x) for x in args.levels.split(","))
        if len(levels) != 2:
            raise ValueError
    except ValueError:
        raise ConfigError(f"--levels must be two comma-separated numbers, got {args.levels!r}")
    summary = annotation.annotate_corpus(
        args.corpus,
        args.out,
        threshold=args.threshold,
        level_bounds=levels,
        num_candidates=args.candidates,
        seed=args.seed if args.seed is not None else 0,
    )
    print(
        f"annotated {summary['num_written']}/{summary['num_videos']} videos"
        + (f", {len(summary['failures'])} failures" if summary["failures"] else "")
    )


def cmd_pretrain_inversion(args):
    cfg = _load_run_config(args)
    result = pipeline.pretrain_inversion(cfg, corpus_dir=args.corpus, out_dir=args.out)
    print(f"pretrained inversion checkpoint: {result.checkpoint_dir} (final loss {result.losses[-1]:.4f})")


def cmd_train_style_e(args):
    cfg = _load_run_config(args)
    if args.steps:
        cfg.style_e.steps = args.steps
    result = pipeline.train_style_e(
        cfg, corpus_dir=args.corpus, records_dir=args.records, out_dir=args.out
    )
    print(f"stage-E checkpoint: {result.checkpoint_dir} (final loss {result.losses[-1]:.5f})")


def cmd_train_style_a(args):
    cfg = _load_run_config(args)
    if args.steps:
        cfg.style_a.steps = args.steps
    result = pipeline.train_style_a(
        cfg, inversion_ckpt=args.inversion, corpus_dir=args.corpus, out_dir=args.out
    )
    print(f"stage-A checkpoint: {result.checkpoint_dir} (final loss {result.losses[-1]:.4f})")


def cmd_generate(args):
    identity = coeffspace.load_frame_pixels(args.identity)
    raw = np.frombuffer(Path(args.audio).read_bytes(), dtype="<f4")
    if raw.size % coeffspace.AUDIO_DIM:
        raise DataError(
            f"audio file size must be a multiple of {coeffspace.AUDIO_DIM} float32 values"
        )
    audio = raw.reshape(-1, coeffspace.AUDIO_DIM)
    art = json.loads(Path(args.art).read_text()) if args.art else {}
    frames, _, _ = pipeline.generate(
        identity,
        audio,
        args.text,
        art,
        style_e_ckpt=args.style_e,
        style_a_ckpt=args.style_a,
        num_steps=args.steps,
        seed=args.seed if args.seed is not None else 0,
        out_dir=args.out,
        allow_hash_mismatch=args.override_hash,
    )
    print(f"generated {len(frames)} frames into {args.out}")


def cmd_eval(args):
    report = metrics.evaluate_dirs(args.pred, args.gt)
    out_dir = Path(args.out) if args.out else Path(args.pred)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1))
    print(report.table())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minitalker")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the procedural corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=8)
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--d-exp", type=int, default=64)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("annotate", help="emotion-text annotation pipeline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=annotation.DEFAULT_THRESHOLD)
    p.add_argument("--levels", default="1.5,3.0")
    p.add_argument("--candidates", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("pretrain-inversion", help="pretrain the frozen generator stack")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain_inversion)

    p = sub.add_parser("train-style-e", help="train the coefficient diffusion stage")
    p.add_argument("--corpus", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_style_e)

    p = sub.add_parser("train-style-a", help="train the art-style stage")
    p.add_argument("--corpus", required=True)
    p.add_argument("--inversion", required=True, help="pretrained inversion checkpoint dir")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_style_a)

    p = sub.add_parser("generate", help="end-to-end stylized sequence generation")
    p.add_argument("--identity", required=True, help="identity image PNG")
    p.add_argument("--audio", required=True, help="raw float32 (N x 16) feature file")
    p.add_argument("--text", required=True, help="emotion style description")
    p.add_argument("--art", help="art style JSON (palette id + reference image path)")
    p.add_argument("--style-e", required=True, help="stage-E checkpoint dir")
    p.add_argument("--style-a", required=True, help="stage-A checkpoint dir")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--override-hash", action="store_true", help="load despite config-hash mismatch")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="SSIM / M-LMD / F-LMD report")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except MiniTalkerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
