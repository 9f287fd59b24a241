"""rsrdiff command-line entry point."""

import argparse
import logging
import sys

import pydantic
from dotenv import load_dotenv

from rsrdiff import __version__
from rsrdiff.commands import MODULES
from rsrdiff.config import log_level
from rsrdiff.errors import RsrDiffError

logger = logging.getLogger("rsrdiff")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors instead of exiting with 2."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> Parser:
    parser = Parser(
        prog="rsrdiff",
        description="Residual-shifting diffusion for few-step super-resolution",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG logging")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in MODULES:
        module.register(subparsers)
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else log_level(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"rsrdiff: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        configure_logging(args.verbose)
        return args.handler(args)
    except FileNotFoundError as e:
        print(f"rsrdiff: file not found: {e.filename or e}", file=sys.stderr)
        return EXIT_USAGE
    except pydantic.ValidationError as e:
        print(f"rsrdiff: invalid configuration:\n{e}", file=sys.stderr)
        return EXIT_DATA
    except (RsrDiffError, RuntimeError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"rsrdiff: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
