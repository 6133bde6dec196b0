# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
#
import logging

import pytest

from padeepc.collect import collect_offline
from padeepc.config import CollectionConfig, CycleSpec, PadeepcConfig
from padeepc.controller import AdaptationPolicy, ControllerConfig
from padeepc.energy import nominal_coefficients
from padeepc.platoon import PlatoonConfig

log = logging.getLogger(__name__)


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="Run the full scale closed loop tests",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="Needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def small_config(**controller):
    """
    A two follower platoon, CAV first, with short horizons.
    """
    settings = dict(T=150, T_ini=5, N=10, adaptation=AdaptationPolicy(enabled=False))
    settings.update(controller)
    return PadeepcConfig(
        platoon=PlatoonConfig(n=2, cav_indices=(1,), hdv_headways=(1.5,)),
        controller=ControllerConfig(**settings),
        collection=CollectionConfig(resample_every=50),
        cycle=CycleSpec(kind="mild", duration=20.0),
    )


@pytest.fixture(scope="session")
def coeffs():
    return nominal_coefficients()


@pytest.fixture(scope="session")
def cfg():
    return small_config()


@pytest.fixture(scope="session")
def collection(cfg):
    return collect_offline(cfg, seed=0)


@pytest.fixture(scope="session")
def lib(collection):
    return collection.library


@pytest.fixture
def outdir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    yield path
