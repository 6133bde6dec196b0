# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
The ``padeepc baseline`` command.
"""
import logging
import sys

from .common import (
    EXIT_FAULT,
    PadeepcException,
    add_common_arguments,
    exit_code,
    setup_logging,
    work_dir,
)
from .config import load_config
from .run import add_scenario_arguments, run

log = logging.getLogger(__name__)


def setup_parser(subparsers):
    """
    Setup the subparser for the ``baseline`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser(
        "baseline", description="Run the OVM-ACC baselines on a single scenario"
    )
    subparser.set_defaults(func=main)
    add_common_arguments(subparser)
    add_scenario_arguments(subparser, library=False)


def main(args):
    """
    The entrypoint into the ``padeepc baseline`` command.

    :param args: The args passed to the command
    :type args: argparse.Namespace
    """
    outdir = work_dir(root=args.out)
    setup_logging(args.log_level, outdir)
    try:
        cfg = load_config(args.config)
        reports = run(cfg, args.seed, "OVM_ACC", outdir, args.cycle)
    except PadeepcException as exc:
        log.error("%s", exc)
        sys.exit(exit_code(exc))
    if any(report.failed for report in reports):
        sys.exit(EXIT_FAULT)
