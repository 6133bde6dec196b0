# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
The ``padeepc export`` command.

Writes tidy, one observation per row, CSV files for plotting elsewhere.

========================  ===================================================
kind                      columns
========================  ===================================================
``trajectory``            ``t, vehicle, v, s, a, u_applied, pred_err_v,
                          pred_err_s, solver_status, relaxed_flag``
``prediction_error``      ``t, vehicle, pred_err_v, pred_err_s``
``energy_distribution``   ``scenario_id, mode, vehicle, kind, kJ``
``safety``                ``t, vehicle, kind, ttc, time_gap`` from a
                          trajectory, or ``scenario_id, mode, min_ttc,
                          tg_min, tg_max, tg_within, dangerous_ttc_steps,
                          collision`` from reports
========================  ===================================================
"""
import logging
import pathlib
import sys

import numpy as np
import pandas as pd

from .common import (
    PadeepcException,
    add_common_arguments,
    exit_code,
    setup_logging,
    work_dir,
)
from .metrics import read_report, time_gap_series, ttc_series
from .trajectory import TrajectoryLog

log = logging.getLogger(__name__)

KINDS = ("trajectory", "prediction_error", "energy_distribution", "safety")

FLOAT_FORMAT = "%.17g"


class ExportError(PadeepcException):
    """
    Raised on an unknown export kind or an unusable input.
    """


def setup_parser(subparsers):
    """
    Setup the subparser for the ``export`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser("export", description="Export plot data")
    subparser.set_defaults(func=main)
    add_common_arguments(subparser, config=False)
    subparser.add_argument(
        "--input",
        required=True,
        type=str,
        help="A trajectory .npz, a report .json or a directory of reports",
    )
    subparser.add_argument(
        "--kind",
        default="trajectory",
        choices=KINDS,
        help="Plot data to write [default: %(default)s]",
    )


def _follower_frame(trajectory, columns):
    n = trajectory.followers
    data = {
        "t": np.repeat(trajectory.time, n),
        "vehicle": np.tile(np.arange(1, n + 1), trajectory.steps),
    }
    data.update({name: values.reshape(-1) for name, values in columns.items()})
    return pd.DataFrame(data)


def _trajectory_frame(trajectory, kind):
    if kind == "trajectory":
        return trajectory.to_frame()
    if kind == "prediction_error":
        return _follower_frame(
            trajectory,
            {"pred_err_v": trajectory.pred_err_v, "pred_err_s": trajectory.pred_err_s},
        )
    if kind == "safety":
        n = trajectory.followers
        kinds = np.array(
            ["CAV" if i in trajectory.cav_indices else "HDV" for i in range(1, n + 1)]
        )
        frame = _follower_frame(
            trajectory,
            {"ttc": ttc_series(trajectory), "time_gap": time_gap_series(trajectory)},
        )
        frame.insert(2, "kind", np.tile(kinds, trajectory.steps))
        return frame.replace([np.inf, -np.inf], np.nan)
    raise ExportError(f"Export kind {kind!r} needs scenario reports")


def _report_frame(reports, kind):
    if kind == "energy_distribution":
        rows = []
        for report in reports:
            for i, (label, energy) in enumerate(
                zip(report.kinds, report.vehicle_energy), start=1
            ):
                rows.append(
                    {
                        "scenario_id": report.scenario_id,
                        "mode": report.mode,
                        "vehicle": i,
                        "kind": label,
                        "kJ": energy,
                    }
                )
        return pd.DataFrame(rows, columns=["scenario_id", "mode", "vehicle", "kind", "kJ"])
    if kind == "safety":
        return pd.DataFrame(
            [
                {
                    "scenario_id": report.scenario_id,
                    "mode": report.mode,
                    "min_ttc": report.min_ttc,
                    "tg_min": report.tg_range[0],
                    "tg_max": report.tg_range[1],
                    "tg_within": report.tg_within,
                    "dangerous_ttc_steps": report.dangerous_ttc_steps,
                    "collision": report.collision,
                }
                for report in reports
            ]
        ).replace([np.inf, -np.inf], np.nan)
    raise ExportError(f"Export kind {kind!r} needs a trajectory")


def export_plotdata(source, kind, path):
    """
    Write plot data of ``kind`` to ``path``.

    :param source: A trajectory or a list of reports
    :type source: :class:`padeepc.trajectory.TrajectoryLog` or list of
        :class:`padeepc.metrics.MetricsReport`
    :param kind: One of ``KINDS``
    :type kind: str
    :param path: The CSV file to write

    :raises ExportError: On an unknown kind or empty input

    :return: The exported frame
    :rtype: ``pandas.DataFrame``
    """
    if kind not in KINDS:
        raise ExportError(f"Unknown export kind {kind!r}, expected one of {', '.join(KINDS)}")
    if isinstance(source, TrajectoryLog):
        if source.steps == 0:
            raise ExportError("Trajectory is empty")
        frame = _trajectory_frame(source, kind)
    else:
        reports = list(source)
        if not reports:
            raise ExportError("No reports to export")
        frame = _report_frame(reports, kind)
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    log.debug("Exported %d %s rows to %s", len(frame), kind, path)
    return frame


def load_source(path):
    """
    Load a trajectory, a single report or every report in a directory.
    """
    path = pathlib.Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files and (path / "reports").is_dir():
            files = sorted((path / "reports").glob("*.json"))
        return [read_report(item) for item in files]
    if path.suffix == ".npz":
        return TrajectoryLog.load(path)
    if path.suffix == ".json":
        try:
            return [read_report(path)]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ExportError(f"Unable to read report {path}: {exc}")
    raise ExportError(f"Unsupported export input {path}")


def main(args):
    """
    The entrypoint into the ``padeepc export`` command.

    :param args: The args passed to the command
    :type args: argparse.Namespace
    """
    outdir = work_dir(root=args.out)
    setup_logging(args.log_level, outdir)
    try:
        source = load_source(args.input)
        frame = export_plotdata(source, args.kind, outdir / f"{args.kind}.csv")
    except PadeepcException as exc:
        log.error("%s", exc)
        sys.exit(exit_code(exc))
    log.info("Exported %d rows to %s", len(frame), outdir / f"{args.kind}.csv")

