# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
The ``padeepc adapt`` command.

Runs the controller with online library updates and saves the adapted
(particular) library for later implementation runs.
"""
import dataclasses
import logging
import sys

from .common import (
    EXIT_FAULT,
    PadeepcException,
    add_common_arguments,
    exit_code,
    setup_logging,
    sub_seed,
    work_dir,
)
from .config import load_config
from .controller import PaDeepcController
from .export import export_plotdata
from .metrics import write_report
from .run import add_scenario_arguments
from .scenario import (
    Mode,
    ScenarioSpec,
    draw_headways,
    report_name,
    resolve_coefficients,
    resolve_library,
    run_scenario,
    scenario_profile,
)

log = logging.getLogger(__name__)

ADAPTED_LIBRARY = "library_adapted.npz"


def setup_parser(subparsers):
    """
    Setup the subparser for the ``adapt`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser(
        "adapt", description="Adapt the data library online and save it"
    )
    subparser.set_defaults(func=main)
    add_common_arguments(subparser)
    add_scenario_arguments(subparser)
    subparser.add_argument(
        "--switch-step",
        default=None,
        type=int,
        help="Step at which the HDV drivers are redrawn [default: no change]",
    )


def adapt(cfg, seed, outdir, cycle=None, library=None, switch_step=None):
    """
    Run an adaptation scenario.

    :param switch_step: Redraw the HDV headways of the plant at this step

    :return: The report and the adapted library
    :rtype: tuple
    """
    ctrl_cfg = dataclasses.replace(
        cfg.controller,
        adaptation=dataclasses.replace(cfg.controller.adaptation, enabled=True),
    )
    headways = draw_headways(cfg, seed)
    platoon = cfg.platoon.with_headways(headways) if headways else cfg.platoon
    profile = scenario_profile(cfg, seed, cycle)
    coeffs = resolve_coefficients(cfg, outdir)
    lib = resolve_library(cfg, seed, library, outdir)
    schedule = None
    if switch_step is not None and headways:
        switched = draw_headways(cfg, sub_seed(seed, "switch"))
        schedule = {switch_step: platoon.with_headways(switched)}
        log.info("HDV headways switch from %s to %s at step %d", headways, switched, switch_step)
    controller = PaDeepcController(lib, platoon, ctrl_cfg, coeffs)
    spec = ScenarioSpec("adapt", Mode.PA_DEEPC, platoon, profile, ctrl_cfg, seed)
    result = run_scenario(spec, coeffs, lib, controller=controller, plant_schedule=schedule)
    write_report(result.report, outdir / "reports" / report_name(result.report))
    result.trajectory.save(outdir / "trajectory_adapt.npz")
    export_plotdata(result.trajectory, "prediction_error", outdir / "prediction_error.csv")
    controller.lib.save(outdir / ADAPTED_LIBRARY)
    log.info(
        "Adapted library saved, %d updates accepted, %d rejected",
        controller.accepted_updates,
        controller.rejected_updates,
    )
    return result.report, controller.lib


def main(args):
    """
    The entrypoint into the ``padeepc adapt`` command.

    :param args: The args passed to the command
    :type args: argparse.Namespace
    """
    outdir = work_dir(root=args.out)
    setup_logging(args.log_level, outdir)
    try:
        cfg = load_config(args.config)
        report, _ = adapt(cfg, args.seed, outdir, args.cycle, args.library, args.switch_step)
    except PadeepcException as exc:
        log.error("%s", exc)
        sys.exit(exit_code(exc))
    if report.failed:
        sys.exit(EXIT_FAULT)
