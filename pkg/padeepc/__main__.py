# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
The entrypoint into padeepc.
"""

from argparse import ArgumentParser

from . import adapt, baseline, batch, collect, export, run
from .common import EXIT_USAGE, __version__


def setup_cli():
    """
    Build the argparser with its subparsers.

    The modules with commands to add must specify a setup_parser function
    that takes in the subparsers object from `argparse.add_subparsers()`

    :return: The fully setup argument parser
    :rtype: ``argparse.ArgumentParser``
    """
    argparser = ArgumentParser(
        prog="padeepc",
        description="Physics augmented data-enabled eco-driving for mixed platoons",
    )
    argparser.add_argument("--version", action="version", version=__version__)
    subparsers = argparser.add_subparsers()

    modules_to_setup = [
        collect,
        adapt,
        run,
        batch,
        baseline,
        export,
    ]
    for mod in modules_to_setup:
        mod.setup_parser(subparsers)

    return argparser


def main(argv=None):
    """
    Run the padeepc cli and dispatch to subcommands.
    """
    parser = setup_cli()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        parser.exit(EXIT_USAGE, "\nNo subcommand given...\n\n")
    args.func(args)


if __name__ == "__main__":
    main()
