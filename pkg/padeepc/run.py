# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
The ``padeepc run`` command.
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
from .config import MODES, load_config
from .export import export_plotdata
from .metrics import write_report
from .scenario import (
    Mode,
    draw_headways,
    mode_specs,
    report_name,
    resolve_coefficients,
    resolve_library,
    run_scenario,
    scenario_profile,
)

log = logging.getLogger(__name__)


def add_scenario_arguments(subparser, library=True):
    """
    Add ``--cycle`` and, optionally, ``--library``.
    """
    subparser.add_argument(
        "--cycle",
        default=None,
        type=str,
        help="PV speed profile CSV with a 't,v' header [default: the configured cycle]",
    )
    if library:
        subparser.add_argument(
            "--library",
            default=None,
            type=str,
            help="Data library .npz [default: <out>/library.npz, collected if missing]",
        )


def setup_parser(subparsers):
    """
    Setup the subparser for the ``run`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser("run", description="Run a single scenario")
    subparser.set_defaults(func=main)
    add_common_arguments(subparser)
    add_scenario_arguments(subparser)
    subparser.add_argument(
        "--mode",
        default="PA_DEEPC",
        choices=MODES,
        help="The CAV control mode [default: %(default)s]",
    )


def run(cfg, seed, mode, outdir, cycle=None, library=None):
    """
    Run one scenario in ``mode`` and write its report and trajectory.

    ``OVM_ACC`` runs every configured baseline parameter set.

    :return: The reports written
    :rtype: list of :class:`padeepc.metrics.MetricsReport`
    """
    headways = draw_headways(cfg, seed)
    platoon = cfg.platoon.with_headways(headways) if headways else cfg.platoon
    profile = scenario_profile(cfg, seed, cycle)
    coeffs = resolve_coefficients(cfg, outdir)
    lib = None
    if Mode(mode) != Mode.OVM_ACC:
        lib = resolve_library(cfg, seed, library, outdir)
    log.info("Running %s over %.1f s with HDV headways %s", mode, profile.duration, headways)
    reports = []
    for spec in mode_specs(cfg, "0", platoon, profile, seed, [mode]):
        result = run_scenario(spec, coeffs, lib)
        write_report(result.report, outdir / "reports" / report_name(result.report))
        result.trajectory.save(outdir / f"trajectory_{spec.label}.npz")
        export_plotdata(result.trajectory, "trajectory", outdir / f"trajectory_{spec.label}.csv")
        reports.append(result.report)
    return reports


def main(args):
    """
    The entrypoint into the ``padeepc run`` command.

    :param args: The args passed to the command
    :type args: argparse.Namespace
    """
    outdir = work_dir(root=args.out)
    setup_logging(args.log_level, outdir)
    try:
        cfg = load_config(args.config)
        reports = run(cfg, args.seed, args.mode, outdir, args.cycle, args.library)
    except PadeepcException as exc:
        log.error("%s", exc)
        sys.exit(exit_code(exc))
    if any(report.failed for report in reports):
        sys.exit(EXIT_FAULT)
