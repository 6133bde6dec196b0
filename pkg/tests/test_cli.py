# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
from textwrap import dedent
from unittest.mock import patch

import pandas as pd
import pytest

from padeepc.__main__ import main, setup_cli
from padeepc.adapt import ADAPTED_LIBRARY
from padeepc.collect import COEFFICIENTS, DATASET, HEADWAYS, LIBRARY
from padeepc.common import EXIT_CONFIG, EXIT_FAULT, EXIT_USAGE, __version__
from padeepc.deepc import HankelLibrary
from padeepc.metrics import read_report

SMALL_CONFIG = dedent(
    """\
    platoon:
      n: 2
      cav_indices: [1]
      hdv_headways: [1.5]
    controller:
      T: 150
      T_ini: 5
      N: 10
      adaptation:
        enabled: false
    collection:
      resample_every: 50
    cycle:
      kind: mild
      duration: 20.0
    """
)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(SMALL_CONFIG)
    return path


@pytest.fixture(scope="module")
def collected(tmp_path_factory):
    """
    An output directory populated by ``padeepc collect``.
    """
    root = tmp_path_factory.mktemp("collected")
    config = root / "config_in.yaml"
    config.write_text(SMALL_CONFIG)
    main(["collect", "--config", str(config), "--out", str(root), "--log-level", "warning"])
    return root


def test_setup_cli():
    args = setup_cli().parse_args(["run", "--mode", "OVM_ACC", "--seed", "3"])
    assert args.mode == "OVM_ACC"
    assert args.seed == 3
    assert args.config is None
    assert args.library is None


def test_unknown_mode_is_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        setup_cli().parse_args(["run", "--mode", "MPC"])
    assert excinfo.value.code == 2


def test_no_subcommand(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == EXIT_USAGE
    assert "No subcommand given" in capsys.readouterr().err


def test_version(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_collect_outputs(collected):
    for name in (DATASET, LIBRARY, COEFFICIENTS, HEADWAYS, "config.yaml", "padeepc.log"):
        assert (collected / name).exists(), name
    lib = HankelLibrary.load(collected / LIBRARY)
    assert lib.T == 150
    assert (lib.T_ini, lib.N) == (5, 10)
    schedule = pd.read_csv(collected / HEADWAYS)
    assert list(schedule.columns) == ["step", "h_2"]
    assert list(schedule["step"]) == [0, 50, 100]


def test_run_uses_collected_library(collected):
    with patch("padeepc.scenario.collect_offline") as collect:
        main(["run", "--config", str(collected / "config.yaml"), "--out", str(collected)])
    collect.assert_not_called()
    report = read_report(collected / "reports" / "0_PA_DEEPC.json")
    assert not report.collision
    assert report.steps == 200
    assert (collected / "trajectory_PA_DEEPC.npz").exists()
    assert (collected / "trajectory_PA_DEEPC.csv").exists()


def test_baseline(config_file, tmp_path):
    out = tmp_path / "baseline"
    main(["baseline", "--config", str(config_file), "--out", str(out)])
    names = sorted(path.name for path in (out / "reports").glob("*.json"))
    assert names == ["0_OVM_ACC_a0.5_b0.8.json", "0_OVM_ACC_a0.8_b0.5.json"]


def test_adapt(collected):
    main(["adapt", "--config", str(collected / "config.yaml"), "--out", str(collected)])
    adapted = HankelLibrary.load(collected / ADAPTED_LIBRARY)
    original = HankelLibrary.load(collected / LIBRARY)
    assert adapted.K == original.K
    assert (collected / "prediction_error.csv").exists()


def test_run_with_cycle_file(collected, tmp_path):
    cycle = tmp_path / "cycle.csv"
    cycle.write_text("t,v\n" + "".join(f"{k * 0.1:.1f},15.0\n" for k in range(60)))
    out = tmp_path / "cycle_run"
    main(
        [
            "run",
            "--config",
            str(collected / "config.yaml"),
            "--library",
            str(collected / LIBRARY),
            "--cycle",
            str(cycle),
            "--out",
            str(out),
        ]
    )
    assert read_report(out / "reports" / "0_PA_DEEPC.json").steps == 60


def test_config_error_exit_code(tmp_path):
    config = tmp_path / "bad.yaml"
    config.write_text("controller:\n  horizon: 3\n")
    with pytest.raises(SystemExit) as excinfo:
        main(["baseline", "--config", str(config), "--out", str(tmp_path / "out")])
    assert excinfo.value.code == EXIT_CONFIG


def test_small_max_columns_fails_before_running(config_file, tmp_path):
    config = tmp_path / "columns.yaml"
    config.write_text(
        config_file.read_text().replace(
            "enabled: false", "enabled: true\n    max_columns: 12"
        )
    )
    with patch("padeepc.adapt.adapt") as adapt:
        with pytest.raises(SystemExit) as excinfo:
            main(["adapt", "--config", str(config), "--out", str(tmp_path / "out")])
    assert excinfo.value.code == EXIT_CONFIG
    adapt.assert_not_called()


def test_missing_library_exit_code(config_file, tmp_path):
    with pytest.raises(SystemExit) as excinfo:
        main(
            [
                "run",
                "--config",
                str(config_file),
                "--library",
                str(tmp_path / "missing.npz"),
                "--out",
                str(tmp_path / "out"),
            ]
        )
    assert excinfo.value.code == EXIT_FAULT
