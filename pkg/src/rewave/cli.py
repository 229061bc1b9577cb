"""Command-line entry point: ``rewave {generate,simulate,verify,stats}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import __version__
from .config import ConfigError, load_config
from .datasetgen import ClassGenerationError
from .pipeline import (
    OutputDirError,
    dataset_stats,
    format_stats,
    generate_dataset,
    simulate_to_dir,
    verify_dataset,
)

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_CLASS, EXIT_IO = 0, 1, 2, 3, 4
THREADS_ENV = "REWAVE_THREADS"

log = logging.getLogger("rewave")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML config file, or preset:NAME")
    p.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        dest="overrides",
        help="override a config key (dotted for sections); repeatable",
    )
    p.add_argument("--seed", type=int, metavar="U64", help="master seed")
    p.add_argument("--out", metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rewave", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a labelled dataset")
    _add_config_flags(g)
    g.add_argument("--threads", type=int, metavar="N", help=f"worker processes (env {THREADS_ENV})")

    s = sub.add_parser("simulate", help="dump every frame of one episode")
    _add_config_flags(s)
    s.add_argument("--class-id", type=int, help="use this class's parameters and episode seed")
    s.add_argument("--episode", type=int, default=0, help="episode id (default 0)")
    s.add_argument("--format", choices=("raw", "cropped"), default="raw")
    s.add_argument("--threads", type=int, metavar="N", help="accepted for symmetry; one episode is sequential")

    v = sub.add_parser("verify", help="check a dataset against its manifest and invariants")
    v.add_argument("dataset", metavar="DIR")
    v.add_argument("--deep", action="store_true", help="also re-simulate frames to check thresholds")

    st = sub.add_parser("stats", help="summarise a dataset")
    st.add_argument("dataset", metavar="DIR")
    st.add_argument("--images", action="store_true", help="also decode images for pixel counts")
    st.add_argument("--json", action="store_true", help="print JSON instead of a table")
    return parser


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return None


def _load(args, require_grid: bool = True):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"master_seed={args.seed}")
    if args.out is not None:
        overrides.append(f"output_dir={json.dumps(args.out)}")
    threads = _threads(args)
    if threads is not None:
        overrides.append(f"workers={threads}")
    return load_config(args.config, overrides, require_grid)


def cmd_generate(args) -> int:
    cfg = _load(args)
    if not cfg.output_dir:
        raise ConfigError("no output directory (use --out or output_dir)")
    t0 = time.perf_counter()
    summary = generate_dataset(cfg, cfg.output_dir, cfg.workers)
    print(
        f"wrote {summary['images']} images for {summary['classes']} classes to {cfg.output_dir} "
        f"in {time.perf_counter() - t0:.1f}s"
    )
    if summary["adjusted_classes"]:
        print(f"selection relaxed for classes: {summary['adjusted_classes']}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args, require_grid=args.class_id is not None)
    if not cfg.output_dir:
        raise ConfigError("no output directory (use --out or output_dir)")
    files = simulate_to_dir(
        cfg, cfg.output_dir, class_id=args.class_id, episode=args.episode, fmt=args.format
    )
    print(f"wrote {len(files)} frames to {cfg.output_dir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        problems = verify_dataset(args.dataset, deep=args.deep)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for p in problems:
        print(p)
    if problems:
        print(f"FAIL: {len(problems)} violation(s)")
        return EXIT_FAILED
    print("OK")
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        stats = dataset_stats(args.dataset, decode_images=args.images)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.json:
        print(json.dumps(stats, indent=2, sort_keys=True))
    else:
        print(format_stats(stats))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, OutputDirError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ClassGenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CLASS
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
