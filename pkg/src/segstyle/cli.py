"""Command line interface.

    segstyle segment     IMAGE -o DIR         masks + pieces + manifest
    segstyle stylize     CONTENT STYLE -o PNG global style transfer
    segstyle segstylize  CONTENT STYLE -o DIR per-object pipeline
    segstyle train       DATASET -o DIR       toy-scale training
    segstyle fetch-weights --url U --sha256 H -o CKPT
    segstyle compare     C S GLOBAL SEG -o PNG

Exit codes: 0 success, 2 bad arguments, 3 backend failure, 4 I/O failure,
5 checkpoint error, 6 non-finite training loss.
"""
from __future__ import annotations

import argparse
import os
import random
import sys

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .compositor import NetworkStylizer, compare_grid, run_pipeline, save_run
from .config import BACKENDS, resolve_config
from .errors import (
    BackendError,
    CheckpointError,
    ContractError,
    ImageFormatError,
    ManifestError,
    PipelineError,
    TrainingDivergedError,
)
from .imaging import INTERPOLATIONS, RESIZE_MODES, load_image, save_image, save_mask_png
from .pretrained import convert_encoder_file, download_verified
from .segmentation import (
    MaskRCNNBackend,
    detect_instances,
    extract_pieces,
    load_manifest,
    save_manifest,
)
from .train import run_training

WEIGHTS_DIR_ENV = "SEGSTYLE_WEIGHTS_DIR"
DEFAULT_WEIGHTS_NAME = "default.ckpt"


def _seed_all(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def _resolve_weights(cfg) -> str:
    if cfg.weights:
        return cfg.weights
    weights_dir = os.environ.get(WEIGHTS_DIR_ENV)
    if weights_dir:
        candidate = os.path.join(weights_dir, DEFAULT_WEIGHTS_NAME)
        if os.path.exists(candidate):
            return candidate
    raise ContractError(
        f"no weights given: pass --weights or put {DEFAULT_WEIGHTS_NAME} under "
        f"${WEIGHTS_DIR_ENV}"
    )


def _parse_paste_order(text):
    if text is None or text in ("area-desc", "manifest"):
        return text
    try:
        return [int(part) for part in text.split(",")]
    except ValueError:
        raise ContractError(
            f"--paste-order must be 'area-desc', 'manifest', or a comma list "
            f"of indices, got {text!r}"
        )


def _overrides(args, names) -> dict:
    out = {}
    for name in names:
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            out[name.replace("-", "_")] = value
    return out


def _load_segmentation(cfg, img):
    if cfg.manifest or cfg.backend == "manifest":
        if not cfg.manifest:
            raise ContractError("backend 'manifest' needs --manifest with a manifest path")
        seg = load_manifest(cfg.manifest)
        if seg.source_dims != img.dims:
            raise ContractError(
                f"manifest dims {seg.source_dims} do not match image dims {img.dims}"
            )
        return seg
    return detect_instances(
        img,
        cfg.score_threshold,
        backend=MaskRCNNBackend(),
        min_mask_pixels=cfg.min_mask_pixels,
    )


def cmd_segment(args) -> int:
    cfg = resolve_config(args.config, _overrides(args, SEGMENT_FIELDS))
    _seed_all(cfg.seed)
    img = load_image(args.image)
    seg = _load_segmentation(cfg, img)
    if not seg.instances:
        print("warning: no instances detected; background covers the whole image", file=sys.stderr)
    out_dir = args.output
    os.makedirs(out_dir, exist_ok=True)
    save_manifest(seg, os.path.join(out_dir, "manifest.json"))
    background_piece, pieces = extract_pieces(img, seg)
    save_image(background_piece, os.path.join(out_dir, "background.png"))
    for i, (inst, piece) in enumerate(zip(seg.instances, pieces)):
        save_mask_png(inst.mask, os.path.join(out_dir, f"mask_{i}.png"))
        save_image(piece, os.path.join(out_dir, f"piece_{i}.png"))
    print(f"wrote {len(seg.instances)} instance(s) to {out_dir}")
    return 0


def cmd_stylize(args) -> int:
    cfg = resolve_config(args.config, _overrides(args, STYLIZE_FIELDS))
    _seed_all(cfg.seed)
    net = load_checkpoint(_resolve_weights(cfg))
    stylizer = NetworkStylizer(net, cfg.resize_policy())
    content = load_image(args.content)
    style = load_image(args.style)
    save_image(stylizer(content, style), args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_segstylize(args) -> int:
    overrides = _overrides(args, SEGSTYLIZE_FIELDS)
    if args.paste_order is not None:
        overrides["paste_order"] = _parse_paste_order(args.paste_order)
    cfg = resolve_config(args.config, overrides)
    _seed_all(cfg.seed)
    net = load_checkpoint(_resolve_weights(cfg))
    stylizer = NetworkStylizer(net, cfg.resize_policy())
    content = load_image(args.content)
    style = load_image(args.style)
    seg = _load_segmentation(cfg, content)
    run = run_pipeline(content, style, seg, stylizer, paste_order=cfg.paste_order)
    comparison = None
    if args.compare:
        comparison = compare_grid(content, style, stylizer(content, style), run.final)
    save_run(run, args.output, cfg.snapshot(), comparison)
    print(f"wrote pipeline run to {args.output}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, _overrides(args, TRAIN_FIELDS), check_paths=False)
    _seed_all(cfg.seed)
    os.makedirs(args.output, exist_ok=True)
    result = run_training(
        args.dataset,
        steps=args.steps,
        lr=args.lr,
        size=args.size,
        seed=cfg.seed,
        profile=args.profile,
        loss_weights=cfg.loss_weights(),
        csv_path=os.path.join(args.output, "losses.csv"),
        checkpoint_path=os.path.join(args.output, "checkpoint.ckpt"),
        log_every=args.log_every,
    )
    if result.history:
        print(
            f"trained {len(result.history)} step(s); "
            f"total loss {result.history[0].total:.4g} -> {result.history[-1].total:.4g}"
        )
    else:
        print("wrote initialization checkpoint (0 steps)")
    return 0


def cmd_fetch_weights(args) -> int:
    raw_path = args.keep_raw or (args.output + ".raw")
    download_verified(args.url, args.sha256, raw_path)
    net = convert_encoder_file(raw_path, profile=args.profile, seed=args.seed or 0)
    save_checkpoint(net, args.output)
    if not args.keep_raw:
        os.unlink(raw_path)
    print(f"wrote encoder checkpoint to {args.output} (transfer modules untrained)")
    return 0


def cmd_compare(args) -> int:
    panels = [load_image(p) for p in (args.content, args.style, args.global_image, args.seg_image)]
    save_image(compare_grid(*panels), args.output)
    print(f"wrote {args.output}")
    return 0


SEGMENT_FIELDS = ("backend", "manifest", "score-threshold", "min-mask-pixels", "seed")
STYLIZE_FIELDS = ("weights", "resize-mode", "max-side", "interpolation", "seed")
SEGSTYLIZE_FIELDS = SEGMENT_FIELDS + ("weights", "resize-mode", "max-side", "interpolation")
TRAIN_FIELDS = (
    "seed",
    "lambda-content",
    "lambda-style",
    "lambda-identity1",
    "lambda-identity2",
)


def _add_config_flags(p, fields):
    p.add_argument("--config", help="JSON config file; flags override its values")
    if "seed" in fields:
        p.add_argument("--seed", type=int, help="RNG seed for all stochastic stages")
    if "weights" in fields:
        p.add_argument("--weights", help=f"checkpoint path (default: ${WEIGHTS_DIR_ENV})")
    if "backend" in fields:
        p.add_argument("--backend", choices=BACKENDS, help="segmentation source")
        p.add_argument("--manifest", help="precomputed segmentation manifest (JSON)")
        p.add_argument("--score-threshold", type=float, dest="score_threshold")
        p.add_argument("--min-mask-pixels", type=int, dest="min_mask_pixels")
    if "resize-mode" in fields:
        p.add_argument("--resize-mode", choices=RESIZE_MODES, dest="resize_mode")
        p.add_argument("--max-side", type=int, dest="max_side")
        p.add_argument("--interpolation", choices=INTERPOLATIONS)
    if "lambda-content" in fields:
        p.add_argument("--lambda-content", type=float, dest="lambda_content")
        p.add_argument("--lambda-style", type=float, dest="lambda_style")
        p.add_argument("--lambda-identity1", type=float, dest="lambda_identity1")
        p.add_argument("--lambda-identity2", type=float, dest="lambda_identity2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segstyle",
        description="Segmentation-aware arbitrary style transfer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="write instance masks, pieces, and a manifest")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True, help="output directory")
    _add_config_flags(p, SEGMENT_FIELDS)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("stylize", help="global style transfer of one image")
    p.add_argument("content")
    p.add_argument("style")
    p.add_argument("-o", "--output", required=True, help="output PNG path")
    _add_config_flags(p, STYLIZE_FIELDS)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("segstylize", help="segment, stylize pieces, recompose")
    p.add_argument("content")
    p.add_argument("style")
    p.add_argument("-o", "--output", required=True, help="run directory")
    p.add_argument(
        "--paste-order",
        dest="paste_order",
        help="'area-desc', 'manifest', or a comma list like 2,0,1",
    )
    p.add_argument("--compare", action="store_true", help="also write the 4-column grid")
    _add_config_flags(p, SEGSTYLIZE_FIELDS)
    p.set_defaults(func=cmd_segstylize)

    p = sub.add_parser("train", help="toy-scale training run")
    p.add_argument("dataset", help="directory of images (or content/ + style/ subdirs)")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--size", type=int, default=64, help="training resolution (power of two)")
    p.add_argument("--profile", default="tiny", choices=("tiny", "vgg19"))
    p.add_argument("--log-every", type=int, default=0, dest="log_every")
    _add_config_flags(p, TRAIN_FIELDS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fetch-weights", help="download + convert pretrained encoder weights")
    p.add_argument("--url", required=True)
    p.add_argument("--sha256", required=True, help="expected content digest")
    p.add_argument("-o", "--output", required=True, help="checkpoint path to write")
    p.add_argument("--profile", default="vgg19", choices=("tiny", "vgg19"))
    p.add_argument("--keep-raw", dest="keep_raw", help="also keep the downloaded file here")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fetch_weights)

    p = sub.add_parser("compare", help="compose a content|style|global|segmented grid")
    p.add_argument("content")
    p.add_argument("style")
    p.add_argument("global_image")
    p.add_argument("seg_image")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_compare)

    return parser


def _exit_code(exc) -> int:
    if isinstance(exc, BackendError):
        return 3
    if isinstance(exc, CheckpointError):
        return 5
    if isinstance(exc, TrainingDivergedError):
        return 6
    if isinstance(exc, (ManifestError, ImageFormatError, OSError)):
        return 4
    if isinstance(exc, ContractError):
        return 2
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return _exit_code(e.cause)
    except Exception as e:
        code = _exit_code(e)
        print(f"error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
