"""
CLI (Command Line Interface).

One sub-command per pipeline stage, run in this order for a full experiment:

    doanet synthesize   render FOA recordings, scene CSVs and manifests
    doanet prepare      STFT features, MUSIC SPS targets, DOA targets
    doanet music-eval   MUSIC baseline with known source counts
    doanet train        fit one DOAnet per (split, context, overlap)
    doanet infer        network SPS, DOA probabilities and estimates
    doanet eval         DOA error, frame recall, confusion, SPS SNR
    doanet render-sps   PGM heatmaps of an SPS / probability file

Exit codes: 0 success, 1 validation error, 2 missing inputs, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
from typing import Any, Optional, Sequence

from rich.console import Console
from rich.logging import RichHandler

from doanet import __version__
from doanet.config import SCALES, ExperimentConfig, config_to_ini, load_config
from doanet.errors import DoanetError
from doanet.export import summary_table
from doanet.pipeline import (
    cmd_eval,
    cmd_infer,
    cmd_music_eval,
    cmd_prepare,
    cmd_render_sps,
    cmd_synthesize,
    cmd_train,
)
from doanet.training import MODES

logger = logging.getLogger("doanet")
console = Console()


def setup_logging(verbose: bool = False) -> None:
    """Install a single RichHandler on the package logger."""
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: dict[str, dict[str, Any]] = {}
    if args.seed is not None:
        overrides["dataset"] = {"seed": args.seed}
        overrides["training"] = {"seed": args.seed}
    cfg = load_config(args.config, scale=args.scale, overrides=overrides, workers=args.workers)
    console.print(config_to_ini(cfg), markup=False, highlight=False)
    return cfg


def _modes(args: argparse.Namespace) -> tuple[str, ...]:
    return MODES if args.mode == "both" else (args.mode,)


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------


def _cmd_synthesize(args: argparse.Namespace) -> int:
    manifests = cmd_synthesize(_resolve_config(args))
    console.print(f"Wrote {len(manifests)} manifests")
    return 0


def _cmd_prepare(args: argparse.Namespace) -> int:
    n = cmd_prepare(_resolve_config(args))
    console.print(f"Prepared {n} recordings")
    return 0


def _cmd_music_eval(args: argparse.Namespace) -> int:
    reports = cmd_music_eval(_resolve_config(args))
    console.print(summary_table(reports, "MUSIC baseline (known source count)"))
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    for path in cmd_train(_resolve_config(args)):
        console.print(f"Saved {path}")
    return 0


def _cmd_infer(args: argparse.Namespace) -> int:
    n = cmd_infer(_resolve_config(args), _modes(args))
    console.print(f"Inferred {n} recordings")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    reports = cmd_eval(_resolve_config(args), _modes(args))
    console.print(summary_table(reports, "DOAnet vs MUSIC"))
    return 0


def _cmd_render_sps(args: argparse.Namespace) -> int:
    if args.peaks < 1:
        logger.error("--peaks must be >= 1, got %d", args.peaks)
        return 1
    n = cmd_render_sps(args.sps_file, args.out, args.frames, args.scene, args.peaks)
    console.print(f"Rendered {n} frames to {args.out}")
    return 0


HANDLERS = {
    "synthesize": _cmd_synthesize,
    "prepare": _cmd_prepare,
    "music-eval": _cmd_music_eval,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "render-sps": _cmd_render_sps,
}


def build_parser() -> argparse.ArgumentParser:
    """
    Build the argparse CLI parser with sub-commands.

    Shared flags are accepted after the sub-command name.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Experiment INI file")
    common.add_argument("--seed", type=int, default=None, help="Override dataset and training seed")
    common.add_argument("--workers", type=int, default=1, help="Worker processes for per-recording stages")
    common.add_argument("--scale", default=None, help=f"Size preset: {' | '.join(SCALES)} (default: desk)")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    modes = argparse.ArgumentParser(add_help=False)
    modes.add_argument("--mode", choices=(*MODES, "both"), default="both", help="DOA selection mode")

    parser = argparse.ArgumentParser(prog="doanet", description="FOA direction-of-arrival toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synthesize", parents=[common], help="Render recordings and manifests")
    sub.add_parser("prepare", parents=[common], help="Features, SPS targets, DOA targets")
    sub.add_parser("music-eval", parents=[common], help="Evaluate the MUSIC baseline")
    sub.add_parser("train", parents=[common], help="Train DOAnet models")
    sub.add_parser("infer", parents=[common, modes], help="Run trained models on test recordings")
    sub.add_parser("eval", parents=[common, modes], help="Evaluate DOAnet against ground truth and MUSIC")

    p_render = sub.add_parser("render-sps", parents=[common], help="Write PGM heatmaps of SPS frames")
    p_render.add_argument("sps_file", type=str, help="SPS_ or PROB array file")
    p_render.add_argument("--out", type=str, required=True, help="Output directory")
    p_render.add_argument("--frames", type=str, default="", help="Frame range START:STOP (default: all)")
    p_render.add_argument("--scene", type=str, default=None, help="Scene CSV for ground-truth markers")
    p_render.add_argument("--peaks", type=int, default=1, help="Peaks per frame in the CSV")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> None:
    """
    CLI entry point. Parses args, dispatches to command handlers,
    and exits via SystemExit with a return code.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    handler = HANDLERS.get(args.command)
    if handler is None:
        raise SystemExit(2)
    try:
        code = handler(args)
    except DoanetError as exc:
        logger.error("%s", exc)
        raise SystemExit(exc.exit_code) from None
    raise SystemExit(code)
