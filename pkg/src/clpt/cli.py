"""Command-line entry point: ``clpt <preset> --config <path> [--out <dir>]
[--workers k] [--seed-base n]``.

Exit codes: 0 ok, 2 configuration error, 3 runtime failure, 4 I/O error.
``CLPT_WORKERS`` overrides the configured worker count; ``--workers``
overrides both.
"""
import argparse
import logging
import os
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, validate_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("clpt")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="clpt", description="Control landscape experiments (CSV output).")
    p.add_argument("preset", help="one of: " + ", ".join(PRESETS))
    p.add_argument("--config", type=Path, help="INI-style configuration file")
    p.add_argument("--out", type=Path, help="output directory (default: ./out/<preset>)")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--seed-base", type=int, help="first run seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    text = ""
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            print(f"clpt: cannot read config: {exc}", file=sys.stderr)
            return EXIT_IO
    overrides = {}
    env = os.environ.get("CLPT_WORKERS")
    if env:
        try:
            overrides[("experiment", "workers")] = int(env)
        except ValueError:
            print(f"clpt: CLPT_WORKERS={env!r} is not an integer", file=sys.stderr)
            return EXIT_CONFIG
    if args.workers is not None:
        overrides[("experiment", "workers")] = args.workers
    if args.seed_base is not None:
        overrides[("experiment", "seed_base")] = args.seed_base
    try:
        cfg = validate_config(text, preset=args.preset, overrides=overrides)
    except ConfigError as exc:
        for w in exc.warnings:
            print(f"clpt: warning: {w}", file=sys.stderr)
        for e in exc.errors:
            print(f"clpt: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    for w in cfg.warnings:
        print(f"clpt: warning: {w}", file=sys.stderr)

    from .experiments import run_experiment
    from .io import OutputConflict

    out = args.out or Path("out") / cfg.preset
    try:
        path = run_experiment(cfg, out)
    except (OutputConflict, OSError) as exc:
        print(f"clpt: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # numerical failure inside a preset
        log.debug("preset failed", exc_info=True)
        print(f"clpt: {cfg.preset} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
