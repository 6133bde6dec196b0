# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
The ``padeepc batch`` command.

Sweeps every assignment of sampled HDV drivers, runs each scenario in every
requested mode and compares the eco-driving controller against each baseline.
"""
import functools
import logging
import multiprocessing
import sys

import pandas as pd

from .common import (
    EXIT_FAULT,
    PadeepcException,
    add_common_arguments,
    exit_code,
    setup_logging,
    thread_count,
    work_dir,
)
from .config import MODES, load_config
from .metrics import comparison_table, write_report
from .run import add_scenario_arguments
from .scenario import (
    Mode,
    batch_specs,
    ovm_label,
    report_name,
    resolve_coefficients,
    resolve_library,
    run_scenario,
)

log = logging.getLogger(__name__)

SUMMARY = "reports.csv"
FLOAT_FORMAT = "%.10g"


def setup_parser(subparsers):
    """
    Setup the subparser for the ``batch`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser(
        "batch", description="Run the driver diversity sweep and compare modes"
    )
    subparser.set_defaults(func=main)
    add_common_arguments(subparser)
    add_scenario_arguments(subparser)
    subparser.add_argument(
        "--modes",
        default=None,
        nargs="+",
        choices=MODES,
        help="Modes to run [default: batch.modes of the config]",
    )
    subparser.add_argument(
        "--limit",
        default=None,
        type=int,
        help="Run a seeded subset of this many driver combinations [default: all]",
    )


def _scenario_report(spec, coeffs, lib):
    return run_scenario(spec, coeffs, lib).report


def run_batch(specs, coeffs, lib=None, threads=None):
    """
    Run every scenario, in parallel when more than one thread is allowed.

    :param specs: The scenarios
    :type specs: list of :class:`padeepc.scenario.ScenarioSpec`
    :param threads: Worker count, ``PADEEPC_THREADS`` when omitted

    :return: Reports sorted by scenario id then mode
    :rtype: list of :class:`padeepc.metrics.MetricsReport`
    """
    if threads is None:
        threads = thread_count()
    work = functools.partial(_scenario_report, coeffs=coeffs, lib=lib)
    if threads <= 1 or len(specs) <= 1:
        reports = [work(spec) for spec in specs]
    else:
        log.info("Running %d scenarios on %d workers", len(specs), threads)
        with multiprocessing.Pool(min(threads, len(specs))) as pool:
            reports = pool.map(work, specs, chunksize=1)
    return sorted(reports, key=lambda report: (report.scenario_id, report.mode))


def comparison_tables(reports, cfg, modes):
    """
    One comparison table per baseline present in ``modes``.

    :return: Mapping of baseline label to table
    :rtype: dict
    """
    tables = {}
    if Mode.PA_DEEPC.value not in modes:
        return tables
    baselines = []
    if Mode.OVM_ACC.value in modes:
        baselines.extend(ovm_label(params) for params in cfg.baselines)
    if Mode.DEEPC_TRACKING.value in modes:
        baselines.append(Mode.DEEPC_TRACKING.value)
    for label in baselines:
        tables[label] = comparison_table(reports, label, Mode.PA_DEEPC.value)
    return tables


def summary_frame(reports):
    return pd.DataFrame(
        [
            {
                "scenario_id": report.scenario_id,
                "mode": report.mode,
                "total_energy": report.total_energy,
                "pv_energy": report.pv_energy,
                "min_ttc": report.min_ttc,
                "dangerous_ttc_steps": report.dangerous_ttc_steps,
                "tg_min": report.tg_range[0],
                "tg_max": report.tg_range[1],
                "tg_within": report.tg_within,
                "collision": report.collision,
                "relaxed_steps": report.relaxed_steps,
                "fault_steps": report.fault_steps,
            }
            for report in reports
        ]
    )


def write_batch(reports, tables, outdir):
    """
    Write per scenario reports, the summary and the comparison tables.
    """
    for report in reports:
        write_report(report, outdir / "reports" / report_name(report))
    summary_frame(reports).to_csv(outdir / SUMMARY, index=False, float_format=FLOAT_FORMAT)
    for label, table in tables.items():
        table.to_csv(outdir / f"comparison_{label}.csv", index=False, float_format=FLOAT_FORMAT)


def batch(cfg, seed, outdir, modes=None, limit=None, cycle=None, library=None):
    """
    Run the sweep and write its outputs.

    :return: The reports
    :rtype: list of :class:`padeepc.metrics.MetricsReport`
    """
    modes = tuple(modes) if modes else cfg.batch.modes
    limit = limit if limit is not None else cfg.batch.limit
    specs = batch_specs(cfg, seed, modes, limit=limit, cycle=cycle)
    coeffs = resolve_coefficients(cfg, outdir)
    lib = None
    if any(Mode(mode) != Mode.OVM_ACC for mode in modes):
        lib = resolve_library(cfg, seed, library, outdir)
    reports = run_batch(specs, coeffs, lib)
    tables = comparison_tables(reports, cfg, modes)
    write_batch(reports, tables, outdir)
    for label, table in tables.items():
        total = table[table["vehicle"] == "TOTAL"]
        if len(total):
            log.info(
                "PA_DEEPC vs %s: mean total improvement %.2f%%",
                label,
                float(total["Mean Improvement"].iloc[0]),
            )
    return reports


def main(args):
    """
    The entrypoint into the ``padeepc batch`` command.

    :param args: The args passed to the command
    :type args: argparse.Namespace
    """
    outdir = work_dir(root=args.out)
    setup_logging(args.log_level, outdir)
    try:
        cfg = load_config(args.config)
        reports = batch(
            cfg, args.seed, outdir, args.modes, args.limit, args.cycle, args.library
        )
    except PadeepcException as exc:
        log.error("%s", exc)
        sys.exit(exit_code(exc))
    failed = [report for report in reports if report.failed]
    if failed:
        log.warning("%d of %d scenarios failed", len(failed), len(reports))
        sys.exit(EXIT_FAULT)
