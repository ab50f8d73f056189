"""Command-line entry point.

Subcommands: synth-maps, simulate, evaluate, preview, replay.  Exit
codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, RunConfig
from .nifti import NiftiError
from .pipeline import (
    DataError,
    run_evaluate,
    run_preview,
    run_replay,
    run_simulate,
    run_synth_maps,
)


def _add_run_flags(sub):
    sub.add_argument("--config", required=True, help="run config (JSON)")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config's master seed")
    sub.add_argument("--out", default=None,
                     help="override the config's output directory")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker threads over samples (output-invariant)")


def _load_config(args) -> RunConfig:
    return RunConfig.from_file(args.config, seed=args.seed, out_dir=args.out)


def _cmd_synth_maps(args) -> int:
    config = _load_config(args)
    manifest = run_synth_maps(config, threads=args.threads)
    files = sum(len(r["outputs"]) for r in manifest["samples"])
    print(f"wrote {files} files to {config.out_path} (manifest.json)")
    return 0


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    manifest = run_simulate(config, threads=args.threads)
    files = sum(len(r["outputs"]) for r in manifest["samples"])
    print(f"wrote {files} files to {config.out_path} (manifest.json)")
    return 0


def _cmd_evaluate(args) -> int:
    report = run_evaluate(args.pred, args.truth, args.out, label=args.label,
                          pad_to=args.pad_to, resamples=args.resamples,
                          level=args.level, seed=args.seed,
                          directed=args.directed, threads=args.threads)
    print(report.to_text(), end="")
    print(f"report written to {args.out}")
    return 0


def _cmd_preview(args) -> int:
    out = run_preview(args.image, args.axis, args.index, args.out)
    print(f"wrote {out}")
    return 0


def _cmd_replay(args) -> int:
    result = run_replay(args.manifest, args.out, threads=args.threads)
    print(f"replay of {result['command']} verified: "
          f"{result['files']} files byte-identical")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrisynth",
        description="Synthesize MRI volumes from label maps and evaluate "
                    "segmentations.")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("synth-maps",
                          help="sample quantitative maps from labels")
    _add_run_flags(sub)
    sub.set_defaults(func=_cmd_synth_maps)

    sub = subs.add_parser("simulate",
                          help="simulate and corrupt MRI images")
    _add_run_flags(sub)
    sub.set_defaults(func=_cmd_simulate)

    sub = subs.add_parser("evaluate", help="score mask pairs (Dice, HD95)")
    sub.add_argument("--pred", required=True, help="predicted masks")
    sub.add_argument("--truth", required=True, help="ground-truth masks")
    sub.add_argument("--out", required=True, help="report directory")
    sub.add_argument("--label", type=int, default=None,
                     help="binarize masks on this label value")
    sub.add_argument("--pad-to", type=int, default=256, dest="pad_to",
                     help="padded extent (voxels) for the HD95 convention")
    sub.add_argument("--resamples", type=int, default=10_000)
    sub.add_argument("--level", type=float, default=0.95)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--directed", choices=("union", "max"), default="union")
    sub.add_argument("--threads", type=int, default=1)
    sub.set_defaults(func=_cmd_evaluate)

    sub = subs.add_parser("preview", help="save one slice as a PNG")
    sub.add_argument("--image", required=True)
    sub.add_argument("--axis", type=int, default=2)
    sub.add_argument("--index", type=int, default=None,
                     help="slice index (default: middle slice)")
    sub.add_argument("--out", required=True)
    sub.set_defaults(func=_cmd_preview)

    sub = subs.add_parser("replay",
                          help="re-execute a manifest and verify checksums")
    sub.add_argument("--manifest", required=True)
    sub.add_argument("--out", required=True)
    sub.add_argument("--threads", type=int, default=1)
    sub.set_defaults(func=_cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, NiftiError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
