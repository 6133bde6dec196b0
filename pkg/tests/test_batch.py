# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
import math

import pandas as pd
import pytest

from padeepc.batch import (
    SUMMARY,
    batch,
    comparison_tables,
    run_batch,
    summary_frame,
    write_batch,
)
from padeepc.metrics import MetricsReport
from padeepc.scenario import Mode, batch_specs


def report(scenario_id, mode, total, collision=False):
    return MetricsReport(
        scenario_id=scenario_id,
        mode=mode,
        kinds=("CAV", "HDV"),
        vehicle_energy=(total / 2, total / 2),
        total_energy=total,
        pv_energy=1.0,
        min_ttc=math.inf,
        dangerous_ttc_steps=0,
        tg_range=(1.5, 2.0),
        tg_within=1.0,
        pred_err={},
        collision=collision,
    )


def test_batch_specs(cfg):
    specs = batch_specs(cfg, 0, ("PA_DEEPC", "OVM_ACC"), limit=3)
    # One controller run and one run per baseline for each combination.
    assert len(specs) == 3 * (1 + len(cfg.baselines))
    ids = sorted({spec.scenario_id for spec in specs})
    assert len(ids) == 3
    assert all(len(i) == 2 for i in ids)
    for scenario_id in ids:
        runs = [spec for spec in specs if spec.scenario_id == scenario_id]
        assert len({spec.platoon for spec in runs}) == 1
        assert {spec.mode for spec in runs} == {Mode.PA_DEEPC, Mode.OVM_ACC}
    assert [s.scenario_id for s in batch_specs(cfg, 0, ("OVM_ACC",), limit=3)][::2] == ids


def test_batch_specs_full_sweep(cfg):
    pool = cfg.platoon.headway_sampler.group_count * cfg.platoon.headway_sampler.per_group
    specs = batch_specs(cfg, 0, ("PA_DEEPC",))
    assert len(specs) == pool
    assert len({spec.platoon.hdv_headways for spec in specs}) == pool


def test_run_batch_sorted(cfg, coeffs):
    specs = batch_specs(cfg, 1, ("OVM_ACC",), limit=2)
    reports = run_batch(list(reversed(specs)), coeffs, threads=1)
    keys = [(r.scenario_id, r.mode) for r in reports]
    assert keys == sorted(keys)
    assert not any(r.failed for r in reports)


def test_comparison_tables(cfg):
    label = "OVM_ACC_a0.8_b0.5"
    reports = [
        report("0", label, 10.0),
        report("0", "PA_DEEPC", 9.0),
        report("0", "DEEPC_TRACKING", 9.5),
    ]
    tables = comparison_tables(reports, cfg, ("PA_DEEPC", "OVM_ACC", "DEEPC_TRACKING"))
    assert set(tables) == {label, "OVM_ACC_a0.5_b0.8", "DEEPC_TRACKING"}
    total = tables[label].iloc[-1]
    assert total["Mean Improvement"] == pytest.approx(10.0)
    assert tables["OVM_ACC_a0.5_b0.8"].empty
    assert comparison_tables(reports, cfg, ("OVM_ACC",)) == {}


def test_write_batch(cfg, outdir):
    reports = [report("0", "OVM_ACC_a0.8_b0.5", 10.0), report("0", "PA_DEEPC", 9.0, True)]
    tables = comparison_tables(reports, cfg, ("PA_DEEPC", "OVM_ACC"))
    write_batch(reports, tables, outdir)
    assert (outdir / "reports" / "0_PA_DEEPC.json").exists()
    summary = pd.read_csv(outdir / SUMMARY)
    assert list(summary["mode"]) == ["OVM_ACC_a0.8_b0.5", "PA_DEEPC"]
    assert list(summary["collision"]) == [False, True]
    assert (outdir / "comparison_OVM_ACC_a0.8_b0.5.csv").exists()


def test_summary_frame_columns():
    frame = summary_frame([report("1", "PA_DEEPC", 3.0)])
    assert "relaxed_steps" in frame.columns
    assert frame["total_energy"][0] == 3.0


def test_batch_end_to_end(cfg, lib, outdir):
    path, _ = lib.save(outdir / "library")
    reports = batch(cfg, 0, outdir, modes=("PA_DEEPC", "OVM_ACC"), limit=1, library=path)
    assert len(reports) == 1 + len(cfg.baselines)
    assert len({r.scenario_id for r in reports}) == 1
    assert not any(r.collision for r in reports)
    assert (outdir / SUMMARY).exists()
    assert len(list((outdir / "reports").glob("*.json"))) == len(reports)
    table = pd.read_csv(outdir / "comparison_OVM_ACC_a0.8_b0.5.csv")
    assert list(table["vehicle"]) == ["CAV1", "HDV2", "TOTAL"]
