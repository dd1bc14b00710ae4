"""``augbound <kind> --config PATH [--seed N] [--out DIR] [--validate]``.

Exit codes: 0 success, 1 output or runtime failure, 2 bad config,
3 an exhaustive enumeration exceeded its size guard.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from ..decomposition import EnumerationTooLarge
from .config import KINDS, ConfigError, load_config
from .run import OutputError, run

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="augbound", description="Augmentation-aware contrastive bound experiments.")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--validate", action="store_true", help="check the config and exit")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.kind)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed", "must be >= 0")
            cfg = dataclasses.replace(cfg, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.validate:
        print(f"{args.config}: ok ({cfg.kind})")
        return EXIT_OK
    try:
        files = run(cfg, args.out)
    except EnumerationTooLarge as exc:
        print(f"guard violation: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
