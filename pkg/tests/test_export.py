# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
import argparse
import math

import numpy as np
import pandas as pd
import pytest

from padeepc.common import EXIT_FAULT
from padeepc.export import (
    ExportError,
    export_plotdata,
    load_source,
    main,
    setup_parser,
)
from padeepc.metrics import MetricsReport, write_report
from padeepc.trajectory import ROW_COLUMNS, TrajectoryLog


@pytest.fixture
def trajectory():
    log = TrajectoryLog.allocate(5, 2, (1,), 0.1)
    log.position[:] = 0.0
    log.velocity[:] = [10.0, 12.0, 10.0]
    log.acceleration[:] = 0.0
    log.spacing[:, 1:] = 20.0
    log.u_applied[:] = 0.0
    log.pred_err_v[2:, 0] = 0.05
    log.solver_status[:] = "Optimal"
    return log


@pytest.fixture
def reports():
    return [
        MetricsReport(
            scenario_id=str(i),
            mode=mode,
            kinds=("CAV", "HDV"),
            vehicle_energy=(1.0 + i, 2.0),
            total_energy=3.0 + i,
            pv_energy=1.0,
            min_ttc=math.inf,
            dangerous_ttc_steps=0,
            tg_range=(1.4, 2.0),
            tg_within=1.0,
            pred_err={},
        )
        for i in range(2)
        for mode in ("PA_DEEPC", "OVM_ACC")
    ]


def test_trajectory_rows(tmp_path, trajectory):
    frame = export_plotdata(trajectory, "trajectory", tmp_path / "trajectory.csv")
    assert list(frame.columns) == list(ROW_COLUMNS)
    assert len(frame) == 10
    written = pd.read_csv(tmp_path / "trajectory.csv")
    assert list(written["vehicle"][:2]) == [1, 2]
    assert written["u_applied"].isna().sum() == 5


def test_prediction_error_rows(tmp_path, trajectory):
    frame = export_plotdata(trajectory, "prediction_error", tmp_path / "err.csv")
    assert list(frame.columns) == ["t", "vehicle", "pred_err_v", "pred_err_s"]
    assert frame["pred_err_v"].notna().sum() == 3


def test_trajectory_safety_rows(tmp_path, trajectory):
    frame = export_plotdata(trajectory, "safety", tmp_path / "safety.csv")
    assert list(frame["kind"][:2]) == ["CAV", "HDV"]
    cav = frame[frame["vehicle"] == 1]
    np.testing.assert_allclose(cav["ttc"], 10.0)
    # A follower matching its predecessor never closes in.
    assert frame[frame["vehicle"] == 2]["ttc"].isna().all()


def test_energy_distribution(tmp_path, reports):
    frame = export_plotdata(reports, "energy_distribution", tmp_path / "energy.csv")
    assert len(frame) == 8
    assert set(frame["kind"]) == {"CAV", "HDV"}
    assert frame["kJ"].sum() == pytest.approx(2 * (1.0 + 2.0) + 2 * (2.0 + 2.0))


def test_report_safety(tmp_path, reports):
    frame = export_plotdata(reports, "safety", tmp_path / "safety.csv")
    assert frame["min_ttc"].isna().all()
    assert list(frame["tg_min"]) == [1.4] * 4


def test_kind_source_mismatch(tmp_path, trajectory, reports):
    with pytest.raises(ExportError):
        export_plotdata(trajectory, "energy_distribution", tmp_path / "x.csv")
    with pytest.raises(ExportError):
        export_plotdata(reports, "prediction_error", tmp_path / "x.csv")


def test_unknown_kind_and_empty_input(tmp_path, trajectory):
    with pytest.raises(ExportError):
        export_plotdata(trajectory, "histogram", tmp_path / "x.csv")
    with pytest.raises(ExportError):
        export_plotdata([], "safety", tmp_path / "x.csv")
    with pytest.raises(ExportError):
        export_plotdata(trajectory.truncate(0), "trajectory", tmp_path / "x.csv")


def test_load_source(tmp_path, trajectory, reports):
    trajectory.save(tmp_path / "run.npz")
    loaded = load_source(tmp_path / "run.npz")
    assert isinstance(loaded, TrajectoryLog)
    np.testing.assert_array_equal(loaded.velocity, trajectory.velocity)

    for report in reports:
        write_report(report, tmp_path / "batch" / "reports" / f"{report.scenario_id}_{report.mode}.json")
    assert len(load_source(tmp_path / "batch")) == 4
    assert len(load_source(tmp_path / "batch" / "reports" / "0_OVM_ACC.json")) == 1


def test_load_source_rejects(tmp_path):
    path = tmp_path / "notes.txt"
    path.write_text("hello")
    with pytest.raises(ExportError):
        load_source(path)
    broken = tmp_path / "broken.json"
    broken.write_text("{}")
    with pytest.raises(ExportError):
        load_source(broken)


def test_main(tmp_path, trajectory):
    trajectory.save(tmp_path / "run.npz")
    parser = argparse.ArgumentParser()
    setup_parser(parser.add_subparsers())
    args = parser.parse_args(
        [
            "export",
            "--input",
            str(tmp_path / "run.npz"),
            "--kind",
            "prediction_error",
            "--out",
            str(tmp_path / "out"),
        ]
    )
    args.func(args)
    assert (tmp_path / "out" / "prediction_error.csv").exists()


def test_unknown_kind_rejected_by_parser(tmp_path):
    parser = argparse.ArgumentParser()
    setup_parser(parser.add_subparsers())
    with pytest.raises(SystemExit) as excinfo:
        parser.parse_args(
            ["export", "--input", str(tmp_path / "run.npz"), "--kind", "nope"]
        )
    assert excinfo.value.code == 2


def test_main_kind_needing_reports_exits(tmp_path, trajectory):
    trajectory.save(tmp_path / "run.npz")
    parser = argparse.ArgumentParser()
    setup_parser(parser.add_subparsers())
    args = parser.parse_args(
        [
            "export",
            "--input",
            str(tmp_path / "run.npz"),
            "--kind",
            "energy_distribution",
            "--out",
            str(tmp_path),
        ]
    )
    with pytest.raises(SystemExit) as excinfo:
        main(args)
    assert excinfo.value.code == EXIT_FAULT
