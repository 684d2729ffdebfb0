"""Command-line entry point.

Subcommands mirror the pipeline stages; every one takes --config,
--run-dir, and --seed. Exit codes: 0 success, 1 validation problem
(bad flags, bad config, config/run-dir mismatch), 2 runtime failure.
"""

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, apply_seed_override, load_config_file, validate_config
from .data import DataError
from .inpaint import InpaintError
from .metrics import MetricsError
from .plots import PlotError
from .rundir import RUN_ROOT_ENV, RunDir, RunDirError, RunLock, default_run_root
from .wgan import TrainingDivergedError
from . import pipeline

_RUNTIME_ERRORS = (DataError, CheckpointError, InpaintError, MetricsError, PlotError,
                   RunDirError, TrainingDivergedError, OSError, ValueError)


class _Parser(argparse.ArgumentParser):
    # usage problems are validation errors: exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="inpaintlab", description="WGAN-GP image completion toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None,
                       help="JSON config file (default: run dir's config.json, else defaults)")
        p.add_argument("--run-dir", type=Path, default=None,
                       help=f"run directory (default: $%s/default)" % RUN_ROOT_ENV)
        p.add_argument("--seed", type=int, default=None,
                       help="override the global seed (re-derives all section seeds)")
        return p

    add("prepare-data", "build or load the dataset into the run directory")
    add("make-masks", "export the per-image corruption masks as 1-bit PNGs")
    p = add("train-gan", "train the generator/critic pair")
    p.add_argument("--resume-step", type=int, default=None,
                   help="resume from the checkpoint written at this step")
    add("train-enhance", "train the residual enhancement network")
    p = add("inpaint", "complete masked test images (or a --manifest batch)")
    p.add_argument("--manifest", type=Path, default=None,
                   help="JSON list of {image, mask_png | mask:{kind,fraction,seed}} entries")
    p.add_argument("--no-enhancer", action="store_true",
                   help="skip the enhancement pass even if an enhancer checkpoint exists")
    add("evaluate", "score completed images against their originals (PSNR/SSIM)")
    add("plot", "render loss curves and traces with machine-readable summaries")
    return parser


def _resolve_run_dir(args) -> Path:
    if args.run_dir is not None:
        return args.run_dir
    root = default_run_root()
    if root is None:
        raise ConfigError([("", f"--run-dir is required (or set {RUN_ROOT_ENV})")])
    return root / "default"


def _resolve_config(args, run: RunDir) -> dict:
    if args.config is not None:
        doc = load_config_file(args.config)
    elif run.config_path.exists():
        doc = json.loads(run.config_path.read_text(encoding="utf-8"))
    else:
        doc = {}
    if args.seed is not None:
        doc = apply_seed_override(doc, args.seed)
    return validate_config(doc)


def _dispatch(args, cfg: dict, run: RunDir) -> None:
    if args.command == "prepare-data":
        split = pipeline.prepare_data(cfg, run)
        print(f"prepared {len(split.train)} train / {len(split.test)} test images -> {run.data}")
    elif args.command == "make-masks":
        paths = pipeline.make_masks(cfg, run)
        print(f"wrote {len(paths)} masks -> {run.masks}")
    elif args.command == "train-gan":
        result = pipeline.run_train_gan(cfg, run, resume_step=args.resume_step)
        print(f"trained GAN for {cfg['gan']['total_steps']} steps "
              f"({len(result.history)} history rows) -> {run.checkpoints}")
    elif args.command == "train-enhance":
        _, history = pipeline.run_train_enhance(cfg, run)
        last = f", final loss {history[-1][1]:.6g}" if history else ""
        print(f"trained enhancer for {cfg['enhance']['epochs']} epochs{last} -> {run.checkpoints}")
    elif args.command == "inpaint":
        if args.manifest is not None:
            dirs = pipeline.run_inpaint_manifest(cfg, run, args.manifest,
                                                 use_enhancer=not args.no_enhancer)
        else:
            dirs = pipeline.run_inpaint(cfg, run, use_enhancer=not args.no_enhancer)
        print(f"inpainted {len(dirs)} images -> {run.results}")
    elif args.command == "evaluate":
        report = pipeline.run_evaluate(cfg, run)
        agg = report.aggregates
        print(f"evaluated {len(report.rows)} images "
              f"(mean PSNR {agg['psnr_db']['mean']:.2f} dB, mean SSIM {agg['ssim']['mean']:.4f}) "
              f"-> {run.report}")
    else:  # plot
        emitted = pipeline.run_plots(cfg, run)
        print(f"rendered {len(emitted)} plots -> {run.plots}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        run = RunDir(_resolve_run_dir(args))
        cfg = _resolve_config(args, run)
        with RunLock(run.root):
            pipeline.ensure_run_config(run, cfg)
            _dispatch(args, cfg, run)
    except ConfigError as exc:
        print(f"inpaintlab: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"inpaintlab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
