"""
Commands package for the CAPE-KG command line.
"""
from .build import setup_build_command
from .edit import setup_edit_command
from .evaluate import setup_eval_command
from .inspection import setup_inspect_command
from .query import setup_query_command


def setup_all_commands(subparsers, common):
    """Register every subcommand; `common` carries the shared --json/-v flags."""
    setup_build_command(subparsers, common)
    setup_edit_command(subparsers, common)
    setup_query_command(subparsers, common)
    setup_eval_command(subparsers, common)
    setup_inspect_command(subparsers, common)


__all__ = ['setup_all_commands']
