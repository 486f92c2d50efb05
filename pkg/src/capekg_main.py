"""
CAPE-KG - main entry point.
Case-aware knowledge editing over a layered knowledge graph: build a base
graph, apply case-scoped edits, answer multi-hop questions with hop traces
and run MQuAKE-style evaluations.
"""
import argparse
import asyncio
import logging
import os
import sys

from dotenv import load_dotenv

from commands import setup_all_commands
from utils.errors import CapeKGError, UsageError
from utils.storage import dumps

# Load environment variables
load_dotenv()

_LEVELS = {0: logging.WARNING, 1: logging.INFO}


class CommandParser(argparse.ArgumentParser):
    """argparse parser whose usage errors become UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def setup_logging(verbosity=0):
    """Log to stderr so stdout carries only command output."""
    level = _LEVELS.get(verbosity, logging.DEBUG)
    override = os.getenv("CAPEKG_LOG_LEVEL")
    if override:
        level = getattr(logging, override.strip().upper(), level)
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(message)s",
        force=True,
    )


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print machine-readable JSON on stdout")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    parser = CommandParser(
        prog="capekg",
        description="Case-aware knowledge editing over a layered knowledge graph.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="{build,edit,query,eval,inspect}")
    subparsers.required = True
    setup_all_commands(subparsers, common)
    return parser


def _report_error(error, as_json):
    if as_json:
        print(dumps({"error": type(error).__name__, "message": str(error)}))
    else:
        print(f"❌ {type(error).__name__}: {error}", file=sys.stderr)


def main(argv=None):
    """Run one command. Returns the process exit code: 0 ok, 1 user error, 2 internal error."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        _report_error(e, "--json" in argv)
        return 1
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else 0

    setup_logging(args.verbose)
    try:
        payload = asyncio.run(args.handler(args))
    except CapeKGError as e:
        logging.debug(f"🧯 {args.command} failed", exc_info=True)
        _report_error(e, args.json)
        return 1
    except Exception as e:
        logging.exception(f"💥 Internal error in {args.command}")
        _report_error(e, args.json)
        return 2

    if args.json:
        print(dumps(payload))
    else:
        print(args.render(payload))
    return 0


if __name__ == "__main__":
    sys.exit(main())
