# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
The ``padeepc collect`` command.

Offline data collection: the platoon runs behind a constant speed PV while the
CAVs follow the OVM-ACC law plus a multilevel excitation and the HDV drivers
are redrawn at a fixed interval.
"""
import dataclasses
import logging
import sys

import numpy as np
import pandas as pd

from .common import (
    PadeepcException,
    add_common_arguments,
    exit_code,
    setup_logging,
    sub_seed,
    work_dir,
)
from .config import dump_config, load_config
from .deepc import HankelLibrary, gen_excitation, write_dataset
from .energy import fit_poly_coeffs, save_coefficients
from .platoon import (
    EquilibriumPoint,
    OvmLaw,
    SpeedProfile,
    idm_equilibrium_spacing,
    initial_states,
    platoon_accelerations,
    step_platoon,
    to_error_states,
)

log = logging.getLogger(__name__)

DATASET = "dataset.csv"
LIBRARY = "library.npz"
COEFFICIENTS = "energy_coeffs.json"
HEADWAYS = "headways.csv"


def setup_parser(subparsers):
    """
    Setup the subparser for the ``collect`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser(
        "collect", description="Collect offline data and build the data library"
    )
    subparser.set_defaults(func=main)
    add_common_arguments(subparser)


@dataclasses.dataclass
class CollectionResult:
    u: np.ndarray
    y: np.ndarray
    library: HankelLibrary
    schedule: list
    dt: float


def collection_equilibrium(cfg):
    """
    The equilibrium the collected outputs are expressed around.
    """
    nominal = dataclasses.replace(
        cfg.platoon.idm, T_headway=cfg.controller.nominal_headway
    )
    speed = cfg.collection.pv_speed
    return EquilibriumPoint(speed, idm_equilibrium_spacing(speed, nominal))


def collect_offline(cfg, seed):
    """
    Simulate the excitation run and build the generalized library.

    The recorded input is the acceleration each CAV actually applied.

    :param cfg: The full configuration
    :type cfg: :class:`padeepc.config.PadeepcConfig`
    :param seed: Root seed
    :type seed: int

    :raises padeepc.deepc.ExcitationError: If no exciting signal is found
    :raises padeepc.deepc.PersistencyError: If the recorded inputs are not
        persistently exciting

    :rtype: :class:`CollectionResult`
    """
    topology = cfg.platoon
    ctrl = cfg.controller
    collection = cfg.collection
    steps = cfg.collection_steps
    dt = topology.dt
    order = ctrl.pe_order(topology.n)
    log.info("Collecting %d steps, excitation order %d", steps, order)
    excitation = gen_excitation(
        topology.m,
        steps,
        levels=collection.levels,
        hold=collection.hold,
        amp=collection.amp,
        seed=sub_seed(seed, "excitation"),
        order=order,
        retries=collection.retries,
    )
    pool = topology.headway_sampler.sample(sub_seed(seed, "collection", "headways"))
    rng = np.random.default_rng(sub_seed(seed, "collection", "drivers"))
    profile = SpeedProfile(dt=dt, samples=np.full(steps, collection.pv_speed))
    eq = collection_equilibrium(cfg)
    law = OvmLaw(cfg.ovm, topology, (ctrl.a_min, ctrl.a_max))
    states = initial_states(profile, topology)
    cav_columns = list(topology.cav_indices)
    hdv_count = len(topology.hdv_indices)
    u = np.zeros((steps, topology.m))
    y = np.zeros((steps, topology.p))
    schedule = []
    current = topology
    for k in range(steps):
        if hdv_count and k % collection.resample_every == 0:
            picks = rng.choice(pool, size=hdv_count, replace=hdv_count > len(pool))
            headways = tuple(float(h) for h in picks)
            current = topology.with_headways(headways)
            schedule.append((k, headways))
        command = np.clip(law(k, states) + excitation[k], ctrl.a_min, ctrl.a_max)
        accel = platoon_accelerations(states, command, collection.pv_speed, dt, current)
        u[k] = accel[cav_columns]
        y[k] = to_error_states(states, eq)
        if k + 1 < steps:
            states = step_platoon(
                states, command, collection.pv_speed, dt, current, step=k + 1
            )
    library = HankelLibrary.from_data(
        u, y, ctrl.T_ini, ctrl.N, n=order - ctrl.L
    )
    log.info("Built library with %d columns, input rank %d", library.K, library.input_rank)
    return CollectionResult(u=u, y=y, library=library, schedule=schedule, dt=dt)


def write_collection(result, outdir, hdv_indices):
    """
    Write the dataset, library and headway schedule into ``outdir``.
    """
    write_dataset(outdir / DATASET, result.u, result.y, result.dt)
    result.library.save(outdir / LIBRARY)
    rows = [
        dict(step=step, **{f"h_{i}": h for i, h in zip(hdv_indices, headways)})
        for step, headways in result.schedule
    ]
    pd.DataFrame(rows).to_csv(outdir / HEADWAYS, index=False)


def main(args):
    """
    The entrypoint into the ``padeepc collect`` command.

    :param args: The args passed to the command
    :type args: argparse.Namespace
    """
    outdir = work_dir(root=args.out)
    setup_logging(args.log_level, outdir)
    try:
        cfg = load_config(args.config)
        dump_config(cfg, outdir / "config.yaml")
        result = collect_offline(cfg, args.seed)
        write_collection(result, outdir, cfg.platoon.hdv_indices)
        save_coefficients(fit_poly_coeffs(cfg.energy), outdir / COEFFICIENTS)
    except PadeepcException as exc:
        log.error("%s", exc)
        sys.exit(exit_code(exc))
    log.info("Wrote collection outputs to %s", outdir)
