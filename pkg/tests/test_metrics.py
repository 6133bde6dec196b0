# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
import math

import numpy as np
import pytest

from padeepc.energy import PolyCoefficients
from padeepc.metrics import (
    TABLE_COLUMNS,
    MetricsReport,
    comparison_table,
    compute_metrics,
    improvement,
    read_report,
    time_gap,
    time_gap_series,
    ttc,
    ttc_series,
    write_report,
)
from padeepc.trajectory import TrajectoryLog


@pytest.fixture
def flat_coeffs():
    grid = np.zeros((4, 3))
    grid[1, 0] = 100.0
    return PolyCoefficients(p=grid)


@pytest.fixture
def trajectory():
    """
    A PV at 10 m/s with a CAV closing at 2 m/s and an HDV matching speed.
    """
    log = TrajectoryLog.allocate(10, 2, (1,), 0.1)
    log.velocity[:] = [10.0, 12.0, 12.0]
    log.acceleration[:] = 0.0
    log.spacing[:, 1] = 20.0
    log.spacing[:, 2] = 30.0
    log.position[:] = 0.0
    return log


def report(scenario_id, mode, energies, collision=False):
    return MetricsReport(
        scenario_id=scenario_id,
        mode=mode,
        kinds=("CAV", "HDV"),
        vehicle_energy=tuple(energies),
        total_energy=float(sum(energies)),
        pv_energy=1.0,
        min_ttc=math.inf,
        dangerous_ttc_steps=0,
        tg_range=(1.5, 2.0),
        tg_within=1.0,
        pred_err={},
        collision=collision,
    )


def test_ttc():
    assert ttc(20.0, 12.0, 10.0) == pytest.approx(10.0)
    assert ttc(20.0, 10.0, 10.0) == math.inf
    assert ttc(20.0, 8.0, 10.0) == math.inf


def test_time_gap():
    assert time_gap(30.0, 15.0) == pytest.approx(2.0)
    assert time_gap(5.0, 0.0) == math.inf


def test_series(trajectory):
    ttcs = ttc_series(trajectory)
    assert ttcs.shape == (10, 2)
    np.testing.assert_allclose(ttcs[:, 0], 10.0)
    assert np.all(np.isinf(ttcs[:, 1]))
    np.testing.assert_allclose(time_gap_series(trajectory)[:, 1], 2.5)


def test_compute_metrics(trajectory, flat_coeffs):
    result = compute_metrics(trajectory, flat_coeffs, scenario_id="3", mode="PA_DEEPC", seed=5)
    # 100 W per m/s for 1 s.
    assert result.pv_energy == pytest.approx(1.0)
    assert result.vehicle_energy == pytest.approx((1.2, 1.2))
    assert result.total_energy == pytest.approx(2.4)
    assert result.min_ttc == pytest.approx(10.0)
    assert result.dangerous_ttc_steps == 0
    assert result.tg_range == pytest.approx((20.0 / 12.0, 20.0 / 12.0))
    assert result.tg_within == 1.0
    assert result.kinds == ("CAV", "HDV")
    assert math.isnan(result.pred_err["v_median"])
    assert not result.failed


def test_dangerous_steps_counted(trajectory, flat_coeffs):
    trajectory.spacing[:4, 1] = 6.0
    result = compute_metrics(trajectory, flat_coeffs)
    assert result.dangerous_ttc_steps == 4
    assert result.min_ttc == pytest.approx(3.0)


def test_failed_flags(trajectory, flat_coeffs):
    trajectory.fault[3] = True
    assert compute_metrics(trajectory, flat_coeffs).failed
    assert report("0", "PA_DEEPC", [1.0, 1.0], collision=True).failed


def test_improvement():
    np.testing.assert_allclose(improvement([100.0, 50.0], [90.0, 60.0]), [10.0, -20.0])
    assert np.isnan(improvement([0.0], [1.0])[0])


def test_comparison_table():
    reports = [
        report("0", "OVM", [10.0, 20.0]),
        report("0", "PA_DEEPC", [9.0, 18.0]),
        report("1", "OVM", [10.0, 10.0]),
        report("1", "PA_DEEPC", [8.0, 10.0]),
        report("2", "OVM", [10.0, 10.0]),
    ]
    table = comparison_table(reports, "OVM")
    assert list(table.columns) == list(TABLE_COLUMNS)
    assert list(table["vehicle"]) == ["CAV1", "HDV2", "TOTAL"]
    cav = table.iloc[0]
    assert cav["OVM"] == pytest.approx(10.0)
    assert cav["Max(PA)"] == pytest.approx(9.0)
    assert cav["Min(PA)"] == pytest.approx(8.0)
    assert cav["Least Improvement"] == pytest.approx(10.0)
    assert cav["Most Improvement"] == pytest.approx(20.0)
    assert cav["Mean Improvement"] == pytest.approx(15.0)
    total = table.iloc[-1]
    assert total["OVM"] == pytest.approx(25.0)
    assert total["Mean(PA)"] == pytest.approx(22.5)


def test_comparison_skips_failed_runs():
    reports = [
        report("0", "OVM", [10.0, 20.0]),
        report("0", "PA_DEEPC", [9.0, 18.0], collision=True),
    ]
    table = comparison_table(reports, "OVM")
    assert table.empty
    assert list(table.columns) == list(TABLE_COLUMNS)


def test_report_file(tmp_path, trajectory, flat_coeffs):
    result = compute_metrics(trajectory, flat_coeffs, headways=(1.2,))
    path = tmp_path / "reports" / "0_PA_DEEPC.json"
    write_report(result, path)
    text = path.read_text()
    assert "Infinity" not in text and "NaN" not in text
    loaded = read_report(path)
    assert loaded.total_energy == pytest.approx(result.total_energy)
    assert loaded.headways == (1.2,)
    assert math.isnan(loaded.pred_err["s_max"])


def test_report_infinite_values_survive(tmp_path):
    original = report("7", "OVM", [1.0, 2.0])
    path = tmp_path / "report.json"
    write_report(original, path)
    loaded = read_report(path)
    assert loaded.min_ttc == math.inf
    assert loaded.vehicle_labels() == ["CAV1", "HDV2"]
