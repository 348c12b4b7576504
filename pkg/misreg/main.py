"""Command-line entry point: misreg <subcommand> [options]"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from pydantic import ValidationError

from misreg import __version__
from misreg.commands import COMMANDS
from misreg.config import apply_settings, load_settings, settings, validate_settings
from misreg.exceptions import InputError, MisregError
from misreg.utils.helpers import format_duration

logger = logging.getLogger("misreg")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="misreg",
        description="Regression with a spatially misaligned regressor: kriging, two-step "
        "bootstrap, minimum-distance and ABC estimators, and Monte Carlo comparisons",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="<subcommand>")
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def configure(args: argparse.Namespace) -> None:
    if args.config is not None and not Path(args.config).is_file():
        raise InputError(f"Configuration file not found: {args.config}")
    try:
        loaded = load_settings(args.config)
    except ValidationError as e:
        raise InputError(f"Invalid configuration: {e}") from e
    apply_settings(loaded, LOG_LEVEL=args.log_level)

    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    validate_settings(settings)


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand; returns 0 on success, 1 for input errors, 2 for numerical failures"""
    parser = build_parser()
    args = parser.parse_args(argv)

    started = time.perf_counter()
    try:
        configure(args)
        if args.seed < 0:
            raise InputError(f"Seed must be nonnegative, got {args.seed}")
        code = args.func(args)
    except MisregError as e:
        print(f"error: {e.detail}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    logger.info("%s finished in %s", args.command, format_duration(time.perf_counter() - started))
    return code


if __name__ == "__main__":
    sys.exit(main())
