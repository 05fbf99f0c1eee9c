"""Command-line entry point of filematch.

Builds the argument parser from the subcommand modules, configures logging, and is the
single place where library errors become process exit codes: 0 success, 1 numerical
failure, 2 invalid input or usage.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from pydantic import ValidationError

from filematch.cli.commands import PARSERS
from filematch.core.config import settings
from filematch.core.exceptions import EXIT_USAGE, FileMatchError
from filematch.models.schemas import CommandConfig

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Root parser with one subparser per subcommand; global flags go after the name."""
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("global options")
    group.add_argument(
        "--seed", type=int, help=f"base RNG seed (default {settings.SEED}, env FILEMATCH_SEED)"
    )
    group.add_argument("--threads", type=int, help="worker threads (default: all CPUs)")
    group.add_argument("-o", "--output", type=Path, help="output file (default: stdout)")
    group.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )

    parser = argparse.ArgumentParser(
        prog=settings.PROJECT_NAME,
        description="Estimate the unobserved Sigma_YZ block of two files sharing variables X.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {settings.PROJECT_VERSION}"
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for add_parser in PARSERS:
        add_parser(subparsers, common)
    return parser


def configure_logging(verbosity: int) -> None:
    """Root logger on stderr; -v raises the level to INFO, -vv to DEBUG."""
    if verbosity >= 2:
        level: Any = logging.DEBUG
    elif verbosity == 1:
        level = logging.INFO
    else:
        level = settings.LOG_LEVEL.upper()
    logging.basicConfig(
        stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    logging.getLogger().setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parses ``argv``, runs the subcommand and returns the exit code.

    Returns:
        0 on success, 1 on numerical failure, 2 on invalid input or usage.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    configure_logging(args.verbose)

    options: Dict[str, Any] = {
        "subcommand": args.command,
        "threads": args.threads,
        "output": args.output,
        "verbosity": args.verbose,
    }
    if args.seed is not None:
        options["seed"] = args.seed
    try:
        config = CommandConfig(**options)
        return int(args.handler(args, config))
    except FileMatchError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except ValidationError as exc:
        log.error("Invalid option: %s", exc)
        return EXIT_USAGE
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


def run() -> None:
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    run()
