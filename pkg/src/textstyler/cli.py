"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Precedence for settings: built-in defaults < ``--config`` file < flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .config import ConfigError, Mode, TextCondition, dump_config, from_flat, load_config, to_flat, validate_config
from .encoders import ClipEncoders, VGGFeatureExtractor, WeightsUnavailableError, mock_encoders
from .report import (compare_runs, enhance_contrast, load_image, read_loss_csv, render_loss_bar_chart,
                     render_loss_line_chart, save_image)
from .segmentation import FCNSegmenter, MockSegmenter, build_portrait_mask, mask_statistics, save_mask

log = logging.getLogger("textstyler")

# flag dest -> dotted config key
_OVERRIDES = {
    "mode": "mode",
    "iterations": "iterations",
    "seed": "seed",
    "patch_size": "sampler.patch_size",
    "n_patches": "sampler.n_patches",
    "portrait_quota": "sampler.portrait_quota",
    "alpha_portrait": "penalties.alpha_portrait",
    "alpha_back": "penalties.alpha_back",
    "tau_portrait": "thresholds.tau_portrait",
    "tau_back": "thresholds.tau_back",
    "contrast": "contrast_factor",
}


class UsageError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("run configuration (defaults follow the published recipe)")
    g.add_argument("--config", type=Path, help="flat 'key = value' config file")
    g.add_argument("--mode", choices=[m.value for m in Mode], help="default: semantic")
    g.add_argument("--iterations", type=int, help="default: 400")
    g.add_argument("--seed", type=int, help="default: 0")
    g.add_argument("--patch-size", type=int, help="default: 128")
    g.add_argument("--n-patches", type=int, help="default: 64")
    g.add_argument("--portrait-quota", type=int, help="default: n_patches // 4")
    g.add_argument("--alpha-portrait", type=float, help="default: 0.2")
    g.add_argument("--alpha-back", type=float, help="default: 1.0")
    g.add_argument("--tau-portrait", type=float, help="default: 0.9")
    g.add_argument("--tau-back", type=float, help="default: 0.65")
    g.add_argument("--contrast", type=float, help="output contrast factor, default: 1.5")


def _add_model_flags(p: argparse.ArgumentParser, encoders=True):
    if encoders:
        p.add_argument("--mock-encoders", action="store_true",
                       help="use deterministic mock text/image/feature encoders (no weights needed)")
    p.add_argument("--mock-segmenter", nargs="?", const="left-half", choices=MockSegmenter.rules,
                   help="use a rule-based mock segmenter (default rule: left-half)")
    p.add_argument("--size", type=int, help="resize the content image to SIZE x SIZE first")
    p.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="textstyler", description="Text-driven, portrait-aware style transfer")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stylize", help="optimize a StyleNet for one image and prompt")
    p.add_argument("--content", type=Path, required=True)
    p.add_argument("--text", required=True, help="style description")
    p.add_argument("--source-text", default="a Photo")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--checkpoint", type=Path, help="where to save StyleNet weights")
    _add_config_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("compare", help="compare a baseline run directory with an optimized one")
    p.add_argument("--baseline", type=Path, required=True)
    p.add_argument("--optimized", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, help="default: the optimized run directory")

    p = sub.add_parser("segment", help="export the portrait mask of an image")
    p.add_argument("--content", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("mask.png"))
    _add_model_flags(p, encoders=False)

    p = sub.add_parser("show-config", help="print the fully resolved configuration")
    _add_config_flags(p)
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else None
    overrides = {key: getattr(args, dest) for dest, key in _OVERRIDES.items()
                 if getattr(args, dest, None) is not None}
    return validate_config(from_flat(overrides, cfg))


def _segmenter(args):
    if args.mock_segmenter:
        return MockSegmenter(args.mock_segmenter)
    return FCNSegmenter(device=args.device)


def _load_content(args):
    if not args.content.is_file():
        raise FileNotFoundError(f"content image not found: {args.content}")
    return load_image(args.content, args.size)


def cmd_stylize(args) -> int:
    from .trainer import Encoders, train

    cfg = resolve_config(args)
    if not args.text.strip():
        raise UsageError("--text must be nonempty")
    content = _load_content(args)
    if args.mock_encoders:
        enc = Encoders(*mock_encoders())
    else:
        clip = ClipEncoders(device=args.device)
        enc = Encoders(clip.text, clip.image, VGGFeatureExtractor(device=args.device))
    segmenter = _segmenter(args) if cfg.mode is Mode.SEMANTIC else None

    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    cond = TextCondition(args.text, args.source_text)
    result = train(content, cond, cfg, enc, segmenter, log_path=out / "losses.csv",
                   checkpoint_path=args.checkpoint, device=args.device)
    save_image(enhance_contrast(result.final_image, cfg.contrast_factor), out / "result.png")
    render_loss_line_chart({cfg.mode.value: result.loss_log}, out / "line_chart.png")
    manifest = {
        "style_text": cond.style_text,
        "source_text": cond.source_text,
        "content": str(args.content),
        "seed": cfg.seed,
        "config": to_flat(cfg),
        "encoders": result.info["encoders"],
        "segmenter": getattr(segmenter, "name", None),
        "optimizer": result.info["optimizer"],
        "image_size": result.info["image_size"],
        "mask": mask_statistics(result.mask),
        "wall_time_s": result.wall_time,
        "checkpoint": str(result.checkpoint_path) if result.checkpoint_path else None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    last = result.loss_log[-1]
    print(f"wrote {out / 'result.png'} (final total loss {last.l_total:.4f}, {result.wall_time:.1f}s)")
    return 0


def cmd_compare(args) -> int:
    for d in (args.baseline, args.optimized):
        if not (d / "losses.csv").is_file():
            raise FileNotFoundError(f"no losses.csv in {d}")
    base = read_loss_csv(args.baseline / "losses.csv")
    opt = read_loss_csv(args.optimized / "losses.csv")
    report = compare_runs(base, opt)
    out = args.out_dir or args.optimized
    out.mkdir(parents=True, exist_ok=True)
    report.charts = {
        "bar_chart": str(render_loss_bar_chart(report, out / "bar_chart.png")),
        "line_chart": str(render_loss_line_chart({"baseline": base, "optimized": opt},
                                                 out / "comparison_line_chart.png")),
    }
    (out / "comparison.json").write_text(report.to_json())
    for comp in report.baseline:
        mark = "<=" if report.lower_or_equal[comp] else "> "
        print(f"{comp:10s} optimized {report.optimized[comp]:.6g} {mark} baseline {report.baseline[comp]:.6g}")
    print(f"dominance: {str(report.dominance).lower()}")
    return 0


def cmd_segment(args) -> int:
    content = _load_content(args)
    mask = build_portrait_mask(_segmenter(args), content)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_mask(mask, args.out)
    stats = mask_statistics(mask)
    print(f"wrote {args.out}")
    print(f"portrait_fraction {stats['portrait_fraction']:.6f}")
    print(f"background_fraction {stats['background_fraction']:.6f}")
    return 0


def cmd_show_config(args) -> int:
    sys.stdout.write(dump_config(resolve_config(args)))
    return 0


COMMANDS = {"stylize": cmd_stylize, "compare": cmd_compare, "segment": cmd_segment,
            "show-config": cmd_show_config}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as e:
        print(f"textstyler: error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, WeightsUnavailableError, OSError, RuntimeError, ValueError) as e:
        print(f"textstyler: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
