# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Time indexed records of a platoon run.
"""
import dataclasses
import json
import logging
import pathlib

import numpy as np
import pandas as pd

from .common import PadeepcException

log = logging.getLogger(__name__)

#: Status recorded while the controller window is still filling.
COLD_START = "ColdStart"
#: Status recorded for steps driven by a car-following law.
LAW = "Law"
#: Status recorded when the controller fell back to a safe deceleration.
FALLBACK = "Fallback"

ROW_COLUMNS = (
    "t",
    "vehicle",
    "v",
    "s",
    "a",
    "u_applied",
    "pred_err_v",
    "pred_err_s",
    "solver_status",
    "relaxed_flag",
)


class TrajectoryError(PadeepcException):
    """
    Raised when a trajectory file cannot be read or is inconsistent.
    """


@dataclasses.dataclass
class TrajectoryLog:
    """
    Per step, per vehicle record of a run.

    Vehicle ``0`` is the preceding vehicle; columns ``1..n`` are the followers.
    Row ``k`` holds the state at ``t_k`` together with the acceleration applied
    between ``t_k`` and ``t_{k+1}``. Prediction errors are indexed by follower
    (``n`` columns) and are ``nan`` where no prediction exists.
    """

    dt: float
    cav_indices: tuple
    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    spacing: np.ndarray
    u_applied: np.ndarray
    pred_err_v: np.ndarray
    pred_err_s: np.ndarray
    solver_status: np.ndarray
    relaxed: np.ndarray
    fault: np.ndarray
    power: np.ndarray = None

    @classmethod
    def allocate(cls, steps, n, cav_indices, dt):
        """
        Create a log with room for ``steps`` rows, filled with ``nan``.
        """
        m = len(cav_indices)
        return cls(
            dt=float(dt),
            cav_indices=tuple(int(i) for i in cav_indices),
            time=np.arange(steps) * dt,
            position=np.full((steps, n + 1), np.nan),
            velocity=np.full((steps, n + 1), np.nan),
            acceleration=np.full((steps, n + 1), np.nan),
            spacing=np.full((steps, n + 1), np.nan),
            u_applied=np.full((steps, m), np.nan),
            pred_err_v=np.full((steps, n), np.nan),
            pred_err_s=np.full((steps, n), np.nan),
            solver_status=np.full(steps, "", dtype="<U16"),
            relaxed=np.zeros(steps, dtype=bool),
            fault=np.zeros(steps, dtype=bool),
        )

    @property
    def steps(self):
        return self.time.size

    @property
    def followers(self):
        return self.velocity.shape[1] - 1

    def record_states(self, k, states, accelerations):
        """
        Store the states of row ``k`` and the accelerations applied from it.
        """
        for i, state in enumerate(states):
            self.position[k, i] = state.position
            self.velocity[k, i] = state.velocity
            self.spacing[k, i] = state.spacing if i else np.nan
            self.acceleration[k, i] = accelerations[i]

    def truncate(self, steps):
        """
        Return a copy holding the first ``steps`` rows.
        """
        fields = {}
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if isinstance(value, np.ndarray) and field.name != "cav_indices":
                value = value[:steps].copy()
            fields[field.name] = value
        return TrajectoryLog(**fields)

    def to_frame(self):
        """
        Flatten into tidy rows, one per ``(step, follower)``.

        :rtype: ``pandas.DataFrame``
        """
        n = self.followers
        steps = self.steps
        u_full = np.full((steps, n), np.nan)
        for j, idx in enumerate(self.cav_indices):
            u_full[:, idx - 1] = self.u_applied[:, j]
        return pd.DataFrame(
            {
                "t": np.repeat(self.time, n),
                "vehicle": np.tile(np.arange(1, n + 1), steps),
                "v": self.velocity[:, 1:].reshape(-1),
                "s": self.spacing[:, 1:].reshape(-1),
                "a": self.acceleration[:, 1:].reshape(-1),
                "u_applied": u_full.reshape(-1),
                "pred_err_v": self.pred_err_v.reshape(-1),
                "pred_err_s": self.pred_err_s.reshape(-1),
                "solver_status": np.repeat(self.solver_status, n),
                "relaxed_flag": np.repeat(self.relaxed, n),
            },
            columns=list(ROW_COLUMNS),
        )

    def save(self, path):
        """
        Write the log as a compressed ``.npz`` archive.
        """
        arrays = {
            field.name: getattr(self, field.name)
            for field in dataclasses.fields(self)
            if isinstance(getattr(self, field.name), np.ndarray)
        }
        meta = json.dumps({"dt": self.dt, "cav_indices": list(self.cav_indices)})
        np.savez_compressed(path, meta=np.array(meta), **arrays)

    @classmethod
    def load(cls, path):
        """
        Read a log written by :meth:`save`.
        """
        path = pathlib.Path(path)
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(str(data["meta"]))
                arrays = {key: data[key] for key in data.files if key != "meta"}
        except (OSError, ValueError, KeyError) as exc:
            raise TrajectoryError(f"Unable to read trajectory {path}: {exc}")
        return cls(
            dt=float(meta["dt"]), cav_indices=tuple(meta["cav_indices"]), **arrays
        )
