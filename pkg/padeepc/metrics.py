# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Safety, efficiency and energy metrics of platoon runs.
"""
import dataclasses
import json
import logging
import math
import pathlib

import numpy as np
import pandas as pd

from .energy import trip_energy

log = logging.getLogger(__name__)

TABLE_COLUMNS = (
    "vehicle",
    "OVM",
    "Max(PA)",
    "Least Improvement",
    "Min(PA)",
    "Most Improvement",
    "Mean(PA)",
    "Mean Improvement",
)

#: Time to collision at or below this many seconds counts as dangerous.
DANGER_TTC = 4.0
#: Time gaps at or above this many seconds count as inefficient.
INEFFICIENT_TG = 3.0


def ttc(s, v, v_pre):
    """
    Time to collision, infinite unless the gap is closing.

    :param s: Spacing in m
    :param v: Ego speed in m/s
    :param v_pre: Predecessor speed in m/s
    """
    closing = v_pre - v
    if closing < 0:
        return -s / closing
    return math.inf


def time_gap(s, v):
    """
    Spacing over ego speed, infinite at standstill.
    """
    if v > 0:
        return s / v
    return math.inf


def ttc_series(trajectory):
    """
    Time to collision of every follower at every step, shape ``(steps, n)``.
    """
    spacing = trajectory.spacing[:, 1:]
    closing = trajectory.velocity[:, :-1] - trajectory.velocity[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(closing < 0, -spacing / closing, np.inf)
    return out


def time_gap_series(trajectory):
    """
    Time gap of every follower at every step, shape ``(steps, n)``.
    """
    speed = trajectory.velocity[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(speed > 0, trajectory.spacing[:, 1:] / speed, np.inf)


def _finite_or_none(value):
    value = float(value)
    return value if math.isfinite(value) else None


@dataclasses.dataclass
class MetricsReport:
    """
    Summary of one scenario run.

    Energies are in kJ. ``vehicle_energy`` lists the followers in platoon
    order; ``total_energy`` is their sum and excludes the PV.
    """

    scenario_id: str
    mode: str
    kinds: tuple
    vehicle_energy: tuple
    total_energy: float
    pv_energy: float
    min_ttc: float
    dangerous_ttc_steps: int
    tg_range: tuple
    tg_within: float
    pred_err: dict
    collision: bool = False
    relaxed_steps: int = 0
    fault_steps: int = 0
    steps: int = 0
    seed: int = 0
    headways: tuple = ()

    @property
    def failed(self):
        return self.collision or self.fault_steps > 0

    def vehicle_labels(self):
        return [f"{kind}{i}" for i, kind in enumerate(self.kinds, start=1)]

    def to_dict(self):
        """
        JSON ready dictionary; infinities become ``None``.
        """
        data = dataclasses.asdict(self)
        data["kinds"] = list(self.kinds)
        data["vehicle_energy"] = list(self.vehicle_energy)
        data["min_ttc"] = _finite_or_none(self.min_ttc)
        data["tg_range"] = [_finite_or_none(value) for value in self.tg_range]
        data["headways"] = list(self.headways)
        data["pred_err"] = {
            key: _finite_or_none(value) for key, value in self.pred_err.items()
        }
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["kinds"] = tuple(data["kinds"])
        data["vehicle_energy"] = tuple(data["vehicle_energy"])
        data["min_ttc"] = math.inf if data["min_ttc"] is None else data["min_ttc"]
        data["tg_range"] = tuple(
            math.inf if value is None else value for value in data["tg_range"]
        )
        data["headways"] = tuple(data.get("headways", ()))
        data["pred_err"] = {
            key: math.nan if value is None else value
            for key, value in data["pred_err"].items()
        }
        return cls(**data)


def _prediction_summary(trajectory):
    summary = {}
    for name, errors in (("v", trajectory.pred_err_v), ("s", trajectory.pred_err_s)):
        finite = errors[np.isfinite(errors)]
        if finite.size:
            summary[f"{name}_median"] = float(np.median(finite))
            summary[f"{name}_max"] = float(finite.max())
        else:
            summary[f"{name}_median"] = math.nan
            summary[f"{name}_max"] = math.nan
    return summary


def compute_metrics(
    trajectory,
    coeffs,
    scenario_id="0",
    mode="PA_DEEPC",
    collision=False,
    tg_band=(1.2, 3.0),
    seed=0,
    headways=(),
):
    """
    Reduce a trajectory to a :class:`MetricsReport`.

    TTC and the dangerous step count cover every follower; time gap range and
    band fraction cover the CAVs only.

    :param trajectory: The (possibly partial) trajectory
    :type trajectory: :class:`padeepc.trajectory.TrajectoryLog`
    :param coeffs: Power surrogate coefficients
    :type coeffs: :class:`padeepc.energy.PolyCoefficients`
    :param tg_band: Time gap band counted by ``tg_within``
    """
    n = trajectory.followers
    energy = trip_energy(trajectory, coeffs)
    vehicle_energy = tuple(float(value) for value in energy[1:])
    ttcs = ttc_series(trajectory)
    cav_columns = [i - 1 for i in trajectory.cav_indices]
    gaps = time_gap_series(trajectory)[:, cav_columns]
    finite_gaps = gaps[np.isfinite(gaps)]
    if finite_gaps.size:
        tg_range = (float(finite_gaps.min()), float(finite_gaps.max()))
    else:
        tg_range = (math.inf, math.inf)
    within = (gaps >= tg_band[0]) & (gaps <= tg_band[1])
    kinds = tuple("CAV" if i in trajectory.cav_indices else "HDV" for i in range(1, n + 1))
    report = MetricsReport(
        scenario_id=str(scenario_id),
        mode=mode,
        kinds=kinds,
        vehicle_energy=vehicle_energy,
        total_energy=float(sum(vehicle_energy)),
        pv_energy=float(energy[0]),
        min_ttc=float(ttcs.min()) if ttcs.size else math.inf,
        dangerous_ttc_steps=int(np.count_nonzero((ttcs >= 0) & (ttcs <= DANGER_TTC))),
        tg_range=tg_range,
        tg_within=float(within.mean()) if within.size else 0.0,
        pred_err=_prediction_summary(trajectory),
        collision=bool(collision),
        relaxed_steps=int(trajectory.relaxed.sum()),
        fault_steps=int(trajectory.fault.sum()),
        steps=trajectory.steps,
        seed=int(seed),
        headways=tuple(float(h) for h in headways),
    )
    level = logging.WARNING if report.failed else logging.INFO
    log.log(
        level,
        "Scenario %s %s: total %.2f kJ, min TTC %.2f s, %d relaxed, %d faults%s",
        report.scenario_id,
        report.mode,
        report.total_energy,
        report.min_ttc,
        report.relaxed_steps,
        report.fault_steps,
        ", COLLISION" if report.collision else "",
    )
    return report


def improvement(baseline, candidate):
    """
    Percent energy saved by ``candidate`` relative to ``baseline``.
    """
    baseline = np.asarray(baseline, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(
            baseline != 0, (baseline - candidate) / np.abs(baseline) * 100.0, np.nan
        )


def comparison_table(reports, baseline_mode, candidate_mode="PA_DEEPC"):
    """
    Compare a candidate mode against a baseline over paired scenarios.

    One row per follower plus ``TOTAL``. Least and most improvement are the
    extremes of the per-scenario improvements; mean improvement compares the
    mean energies. Scenarios missing either mode or flagged as failed are
    left out.

    :param reports: Reports of every scenario and mode
    :type reports: list of :class:`MetricsReport`

    :rtype: ``pandas.DataFrame``
    """
    baseline = {r.scenario_id: r for r in reports if r.mode == baseline_mode and not r.failed}
    candidate = {r.scenario_id: r for r in reports if r.mode == candidate_mode and not r.failed}
    paired = sorted(set(baseline) & set(candidate))
    if not paired:
        log.warning("No paired scenarios for %s vs %s", candidate_mode, baseline_mode)
        return pd.DataFrame(columns=list(TABLE_COLUMNS))
    labels = candidate[paired[0]].vehicle_labels() + ["TOTAL"]
    base = np.array(
        [list(baseline[key].vehicle_energy) + [baseline[key].total_energy] for key in paired]
    )
    cand = np.array(
        [list(candidate[key].vehicle_energy) + [candidate[key].total_energy] for key in paired]
    )
    per_scenario = improvement(base, cand)
    frame = pd.DataFrame(
        {
            "vehicle": labels,
            "OVM": base.mean(axis=0),
            "Max(PA)": cand.max(axis=0),
            "Least Improvement": per_scenario.min(axis=0),
            "Min(PA)": cand.min(axis=0),
            "Most Improvement": per_scenario.max(axis=0),
            "Mean(PA)": cand.mean(axis=0),
            "Mean Improvement": improvement(base.mean(axis=0), cand.mean(axis=0)),
        },
        columns=list(TABLE_COLUMNS),
    )
    return frame


def write_report(report, path):
    """
    Write a report as sorted, indented JSON.
    """
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def read_report(path):
    """
    Read a report written by :func:`write_report`.
    """
    return MetricsReport.from_dict(json.loads(pathlib.Path(path).read_text()))
