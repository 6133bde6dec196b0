# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Scenario assembly and execution shared by the run commands.
"""
import dataclasses
import enum
import logging
import pathlib

import numpy as np

from .collect import COEFFICIENTS, LIBRARY, collect_offline
from .common import ConfigError, sub_seed
from .controller import run_closed_loop
from .deepc import HankelLibrary
from .energy import load_coefficients, nominal_coefficients
from .metrics import MetricsReport, compute_metrics
from .platoon import CollisionError, OvmLaw, headway_combinations, simulate

log = logging.getLogger(__name__)


class Mode(enum.Enum):
    PA_DEEPC = "PA_DEEPC"
    DEEPC_TRACKING = "DEEPC_TRACKING"
    OVM_ACC = "OVM_ACC"


def ovm_label(params):
    """
    Report label of an OVM-ACC baseline parameter set.
    """
    return f"OVM_ACC_a{params.alpha:g}_b{params.beta:g}"


@dataclasses.dataclass(frozen=True)
class ScenarioSpec:
    """
    One run: a platoon with fixed drivers behind one PV profile in one mode.

    Every mode of a scenario shares ``scenario_id``, the platoon, the profile
    and the seed.
    """

    scenario_id: str
    mode: Mode
    platoon: object
    profile: object
    controller: object
    seed: int = 0
    ovm: object = None

    def __post_init__(self):
        if self.mode == Mode.OVM_ACC and self.ovm is None:
            raise ConfigError("OVM_ACC scenarios need OVM parameters")

    @property
    def label(self):
        if self.mode == Mode.OVM_ACC:
            return ovm_label(self.ovm)
        return self.mode.value


@dataclasses.dataclass
class ScenarioResult:
    report: MetricsReport
    trajectory: object


def draw_headways(cfg, seed):
    """
    HDV headways of a single scenario: configured ones, or distinct draws
    from the sampler.
    """
    topology = cfg.platoon
    if topology.hdv_headways is not None:
        return topology.hdv_headways
    count = len(topology.hdv_indices)
    if not count:
        return ()
    pool = topology.headway_sampler.sample(sub_seed(seed, "headways"))
    rng = np.random.default_rng(sub_seed(seed, "drivers"))
    picks = rng.choice(pool, size=count, replace=count > len(pool))
    return tuple(float(h) for h in picks)


def scenario_profile(cfg, seed, cycle=None):
    """
    The PV profile: ``cycle`` CSV if given, else the configured cycle.
    """
    spec = cfg.cycle
    if cycle is not None:
        spec = dataclasses.replace(spec, path=str(cycle))
    return spec.profile(cfg.platoon.dt, sub_seed(seed, "cycle"))


def mode_specs(cfg, scenario_id, platoon, profile, seed, modes):
    """
    Expand mode names into specs; ``OVM_ACC`` yields one spec per baseline.
    """
    specs = []
    for name in modes:
        mode = Mode(name)
        if mode == Mode.OVM_ACC:
            for params in cfg.baselines:
                specs.append(
                    ScenarioSpec(scenario_id, mode, platoon, profile, cfg.controller, seed, params)
                )
        else:
            specs.append(ScenarioSpec(scenario_id, mode, platoon, profile, cfg.controller, seed))
    return specs


def batch_specs(cfg, seed, modes, limit=None, cycle=None):
    """
    Every headway combination of the sampled drivers in every mode.

    With ``limit`` a seeded subset of the combinations is kept. Scenario ids
    are the combination indices.
    """
    topology = cfg.platoon
    pool = topology.headway_sampler.sample(sub_seed(seed, "headways"))
    combos = headway_combinations(pool, len(topology.hdv_indices))
    indices = np.arange(len(combos))
    if limit is not None and limit < len(combos):
        rng = np.random.default_rng(sub_seed(seed, "subset"))
        indices = np.sort(rng.choice(len(combos), size=limit, replace=False))
    profile = scenario_profile(cfg, seed, cycle)
    width = len(str(len(combos) - 1))
    specs = []
    for index in indices:
        platoon = topology.with_headways(combos[index]) if combos[index] else topology
        specs.extend(
            mode_specs(cfg, f"{index:0{width}d}", platoon, profile, seed, modes)
        )
    log.info("Prepared %d scenarios over %d headway combinations", len(specs), len(indices))
    return specs


def resolve_coefficients(cfg, outdir=None):
    """
    Power coefficients from the configured fixture, a collected fixture in
    ``outdir`` or a fresh fit, in that order.
    """
    if cfg.coefficients is not None:
        return load_coefficients(cfg.coefficients)
    if outdir is not None and (pathlib.Path(outdir) / COEFFICIENTS).exists():
        return load_coefficients(pathlib.Path(outdir) / COEFFICIENTS)
    return nominal_coefficients(cfg.energy)


def resolve_library(cfg, seed, path=None, outdir=None):
    """
    The data library from ``path``, a collected library in ``outdir`` or a
    fresh in-memory collection, in that order.
    """
    if path is not None:
        return HankelLibrary.load(path)
    if outdir is not None and (pathlib.Path(outdir) / LIBRARY).exists():
        return HankelLibrary.load(pathlib.Path(outdir) / LIBRARY)
    log.info("No data library found, collecting one")
    return collect_offline(cfg, seed).library


def run_scenario(spec, coeffs, lib=None, controller=None, plant_schedule=None):
    """
    Execute one scenario and reduce it to metrics.

    A collision ends the run early and is reported, not raised.

    :param spec: The scenario
    :type spec: :class:`ScenarioSpec`
    :param coeffs: Power surrogate coefficients
    :param lib: Data library, required by the data-driven modes

    :rtype: :class:`ScenarioResult`
    """
    collision = False
    try:
        if spec.mode == Mode.OVM_ACC:
            law = OvmLaw(spec.ovm, spec.platoon, (spec.controller.a_min, spec.controller.a_max))
            trajectory = simulate(spec.profile, spec.platoon, law)
        else:
            if lib is None:
                raise ConfigError(f"{spec.label} needs a data library")
            trajectory = run_closed_loop(
                spec.profile,
                spec.platoon,
                spec.controller,
                lib,
                coeffs,
                tracking=spec.mode == Mode.DEEPC_TRACKING,
                controller=controller,
                plant_schedule=plant_schedule,
            )
    except CollisionError as exc:
        collision = True
        trajectory = exc.log
    report = compute_metrics(
        trajectory,
        coeffs,
        scenario_id=spec.scenario_id,
        mode=spec.label,
        collision=collision,
        seed=spec.seed,
        headways=spec.platoon.hdv_headways or (),
    )
    return ScenarioResult(report=report, trajectory=trajectory)


def report_name(report):
    return f"{report.scenario_id}_{report.mode}.json"
