# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Single lane platoon microsimulation.

Vehicle ``0`` is the preceding vehicle (PV) which replays a speed profile.
Followers ``1..n`` are either connected automated vehicles (CAVs), whose
acceleration is an input, or human driven vehicles (HDVs) following the
intelligent driver model. Spacings are bumper to bumper.
"""
import dataclasses
import enum
import itertools
import logging
import math
import pathlib

import numpy as np
import pandas as pd

from .common import ConfigError, PadeepcException
from .trajectory import LAW, TrajectoryLog

log = logging.getLogger(__name__)

CYCLE_KINDS = ("aggressive", "mild", "stop_and_go")


class IdmDomainError(PadeepcException):
    """
    Raised when a car-following law is evaluated outside its domain.
    """


class CollisionError(PadeepcException):
    """
    Raised when a spacing reaches zero.

    :ivar index: The follower that collided with its predecessor
    :ivar step: The step at which the collision happened
    :ivar log: The trajectory up to the collision, when available
    """

    def __init__(self, index, step=None, log=None):
        self.index = index
        self.step = step
        self.log = log
        super().__init__(f"Vehicle {index} collided at step {step}")


class VehicleKind(enum.Enum):
    PV = "PV"
    CAV = "CAV"
    HDV = "HDV"


@dataclasses.dataclass(frozen=True)
class VehicleState:
    position: float
    velocity: float
    acceleration: float = 0.0
    spacing: float = math.inf


@dataclasses.dataclass(frozen=True)
class IdmParams:
    """
    Intelligent driver model parameters.

    ``b_max`` is negative and doubles as the hard acceleration floor.
    """

    a_max: float = 4.0
    delta: float = 4.0
    s_gap: float = 2.0
    b_max: float = -5.0
    v_d: float = 25.0
    T_headway: float = 1.5

    def __post_init__(self):
        if not self.a_max > 0:
            raise ConfigError("idm.a_max must be positive")
        if not self.b_max < 0:
            raise ConfigError("idm.b_max must be negative")
        if not self.s_gap > 0:
            raise ConfigError("idm.s_gap must be positive")
        if not self.v_d > 0:
            raise ConfigError("idm.v_d must be positive")
        if not self.T_headway > 0:
            raise ConfigError("idm.T_headway must be positive")

    def with_headway(self, headway):
        return dataclasses.replace(self, T_headway=float(headway))


@dataclasses.dataclass(frozen=True)
class OvmParams:
    """
    Optimal velocity model parameters of the ACC baseline.
    """

    alpha: float = 0.8
    beta: float = 0.5
    s_st: float = 5.0
    s_go: float = 35.0
    v_max: float = 30.0

    def __post_init__(self):
        if not 0 < self.s_st < self.s_go:
            raise ConfigError("ovm requires 0 < s_st < s_go")
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError("ovm alpha and beta must be positive")
        if not self.v_max > 0:
            raise ConfigError("ovm.v_max must be positive")


@dataclasses.dataclass(frozen=True)
class EquilibriumPoint:
    v_star: float
    s_star: float

    def __post_init__(self):
        if not self.s_star > 0:
            raise IdmDomainError("Equilibrium spacing must be positive")


@dataclasses.dataclass(frozen=True)
class HeadwaySampler:
    """
    Grouped uniform sampler of HDV time headways.
    """

    group_count: int = 12
    headway_range: tuple = (0.5, 2.9)
    per_group: int = 2
    resolution: float = 0.001

    def sample(self, seed):
        return sample_headways(
            seed, self.group_count, self.headway_range, self.per_group, self.resolution
        )


@dataclasses.dataclass(frozen=True)
class PlatoonConfig:
    """
    Platoon topology and driver parameters.

    ``cav_indices`` are 1-based follower indices and must contain 1.
    ``hdv_headways`` assigns a headway to each HDV in platoon order; when it is
    ``None`` every HDV uses ``idm.T_headway``.
    """

    n: int = 4
    cav_indices: tuple = (1, 3)
    dt: float = 0.1
    vehicle_length: float = 5.0
    idm: IdmParams = IdmParams()
    hdv_headways: tuple = None
    headway_sampler: HeadwaySampler = HeadwaySampler()

    def __post_init__(self):
        object.__setattr__(
            self, "cav_indices", tuple(sorted(int(i) for i in self.cav_indices))
        )
        if self.n < 1:
            raise ConfigError("platoon.n must be at least 1")
        if 1 not in self.cav_indices:
            raise ConfigError("platoon.cav_indices must contain the first follower")
        if len(set(self.cav_indices)) != len(self.cav_indices):
            raise ConfigError("platoon.cav_indices contains duplicates")
        if not all(1 <= i <= self.n for i in self.cav_indices):
            raise ConfigError("platoon.cav_indices must lie in 1..n")
        if not self.dt > 0:
            raise ConfigError("platoon.dt must be positive")
        if not self.vehicle_length >= 0:
            raise ConfigError("platoon.vehicle_length must be nonnegative")
        if self.hdv_headways is not None:
            headways = tuple(float(h) for h in self.hdv_headways)
            if len(headways) != len(self.hdv_indices):
                raise ConfigError(
                    f"platoon.hdv_headways needs {len(self.hdv_indices)} values"
                )
            object.__setattr__(self, "hdv_headways", headways)

    @property
    def hdv_indices(self):
        return tuple(i for i in range(1, self.n + 1) if i not in self.cav_indices)

    @property
    def m(self):
        """
        Number of inputs (CAVs).
        """
        return len(self.cav_indices)

    @property
    def p(self):
        """
        Number of outputs: a velocity and a spacing error per follower.
        """
        return 2 * self.n

    def kind(self, index):
        if index == 0:
            return VehicleKind.PV
        if index in self.cav_indices:
            return VehicleKind.CAV
        return VehicleKind.HDV

    def driver(self, index):
        """
        The IDM parameters of follower ``index``.
        """
        if self.hdv_headways is None or index in self.cav_indices:
            return self.idm
        return self.idm.with_headway(self.hdv_headways[self.hdv_indices.index(index)])

    def with_headways(self, headways):
        return dataclasses.replace(self, hdv_headways=tuple(headways))


@dataclasses.dataclass(frozen=True)
class SpeedProfile:
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float).reshape(-1)
        if not self.dt > 0:
            raise ConfigError("Speed profile dt must be positive")
        if samples.size == 0:
            raise ConfigError("Speed profile is empty")
        if np.any(samples < 0) or not np.all(np.isfinite(samples)):
            raise ConfigError("Speed profile samples must be finite and nonnegative")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return len(self) * self.dt

    def accelerations(self):
        return np.diff(self.samples) / self.dt


def _check_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise IdmDomainError(f"{name} must be finite, got {value}")


def idm_acceleration(v, delta_v, s, p, clip=True):
    """
    Intelligent driver model acceleration.

    :param v: Ego speed in m/s
    :param delta_v: ``v - v_preceding`` in m/s, positive while closing in
    :param s: Bumper to bumper spacing in m
    :param p: Driver parameters
    :type p: :class:`IdmParams`
    :param clip: Clip the result to ``[b_max, a_max]``

    :raises IdmDomainError: On non-finite input or non-positive spacing
    """
    _check_finite(v=v, delta_v=delta_v, s=s)
    if s <= 0:
        raise IdmDomainError(f"Spacing must be positive, got {s}")
    desired = p.s_gap + v * p.T_headway + v * delta_v / (2 * math.sqrt(p.a_max * -p.b_max))
    accel = p.a_max * (1 - (v / p.v_d) ** p.delta - (desired / s) ** 2)
    if clip:
        accel = min(max(accel, p.b_max), p.a_max)
    return accel


def idm_equilibrium_spacing(v_star, p):
    """
    Spacing at which an IDM driver holds ``v_star`` behind an equal-speed leader.

    :raises IdmDomainError: When no finite equilibrium exists
    """
    if not 0 <= v_star < p.v_d:
        raise IdmDomainError(f"No finite equilibrium spacing at v={v_star}")
    return (p.s_gap + v_star * p.T_headway) / math.sqrt(1 - (v_star / p.v_d) ** p.delta)


def linearize_idm(v_star, p):
    """
    Linearize the IDM around its equilibrium at ``v_star``.

    With ``ds/dt = v_pre - v`` the error dynamics read
    ``dv/dt = a1 * s - a2 * v + a3 * v_pre``.

    :return: ``(a1, a2, a3)``
    :rtype: tuple
    """
    s_eq = idm_equilibrium_spacing(v_star, p)
    desired = p.s_gap + v_star * p.T_headway
    root = math.sqrt(p.a_max * -p.b_max)
    d_spacing = 2 * p.a_max * desired**2 / s_eq**3
    d_closing = p.a_max * desired * v_star / (s_eq**2 * root)
    d_speed = -p.a_max * (
        p.delta * v_star ** (p.delta - 1) / p.v_d**p.delta
        + 2 * desired * p.T_headway / s_eq**2
    )
    return d_spacing, d_closing - d_speed, d_closing


def ovm_desired_velocity(s, p):
    """
    Half-cosine desired velocity curve of the OVM.
    """
    if s <= p.s_st:
        return 0.0
    if s >= p.s_go:
        return p.v_max
    return p.v_max / 2 * (1 - math.cos(math.pi * (s - p.s_st) / (p.s_go - p.s_st)))


def ovm_acc_baseline(s, v, v_pre, p, bounds=(-5.0, 4.0), clip=True):
    """
    OVM-based adaptive cruise control acceleration.

    :param bounds: Actuator bounds ``(a_min, a_max)``
    """
    _check_finite(s=s, v=v, v_pre=v_pre)
    if s <= 0:
        raise IdmDomainError(f"Spacing must be positive, got {s}")
    accel = p.alpha * (ovm_desired_velocity(s, p) - v) + p.beta * (v_pre - v)
    if clip:
        accel = min(max(accel, bounds[0]), bounds[1])
    return accel


class OvmLaw:
    """
    Drive every CAV of a platoon with the OVM-ACC law.
    """

    def __init__(self, params, cfg, bounds=(-5.0, 4.0)):
        self.params = params
        self.cfg = cfg
        self.bounds = bounds

    def __call__(self, k, states):
        return np.array(
            [
                ovm_acc_baseline(
                    states[i].spacing,
                    states[i].velocity,
                    states[i - 1].velocity,
                    self.params,
                    self.bounds,
                )
                for i in self.cfg.cav_indices
            ]
        )


def platoon_accelerations(states, cav_inputs, pv_velocity_next, dt, cfg):
    """
    Accelerations applied over the next step, after the zero-speed floor.
    """
    cav_inputs = np.asarray(cav_inputs, dtype=float).reshape(-1)
    if cav_inputs.size != cfg.m:
        raise ConfigError(f"Expected {cfg.m} CAV inputs, got {cav_inputs.size}")
    accel = np.zeros(cfg.n + 1)
    accel[0] = (pv_velocity_next - states[0].velocity) / dt
    for i in range(1, cfg.n + 1):
        if i in cfg.cav_indices:
            accel[i] = cav_inputs[cfg.cav_indices.index(i)]
        else:
            state = states[i]
            accel[i] = idm_acceleration(
                state.velocity,
                state.velocity - states[i - 1].velocity,
                state.spacing,
                cfg.driver(i),
            )
        if states[i].velocity + accel[i] * dt < 0:
            accel[i] = -states[i].velocity / dt
    return accel


def step_platoon(states, cav_inputs, pv_velocity_next, dt, cfg, step=None):
    """
    Advance the platoon by one step.

    Speeds integrate forward Euler and are floored at zero; positions and
    spacings use the exact constant-acceleration update.

    :param states: Current states, PV first
    :type states: list of :class:`VehicleState`
    :param cav_inputs: One acceleration per CAV in m/s^2
    :param pv_velocity_next: The PV speed at the next sample
    :param dt: Step length in s
    :param cfg: The platoon configuration
    :type cfg: :class:`PlatoonConfig`

    :raises CollisionError: If any spacing is non-positive after the step

    :return: The next states; each carries the acceleration just applied
    :rtype: list of :class:`VehicleState`
    """
    accel = platoon_accelerations(states, cav_inputs, pv_velocity_next, dt, cfg)
    half = 0.5 * dt * dt
    new_states = [
        VehicleState(
            position=states[0].position + states[0].velocity * dt + accel[0] * half,
            velocity=float(pv_velocity_next),
            acceleration=float(accel[0]),
        )
    ]
    for i in range(1, cfg.n + 1):
        prev, cur = states[i - 1], states[i]
        spacing = (
            cur.spacing
            + (prev.velocity - cur.velocity) * dt
            + (accel[i - 1] - accel[i]) * half
        )
        new_states.append(
            VehicleState(
                position=cur.position + cur.velocity * dt + accel[i] * half,
                velocity=max(cur.velocity + accel[i] * dt, 0.0),
                acceleration=float(accel[i]),
                spacing=spacing,
            )
        )
        if spacing <= 0:
            raise CollisionError(i, step)
    return new_states


def to_error_states(states, eq):
    """
    Output vector ``[v_1 - v*, .., v_n - v*, s_1 - s*, .., s_n - s*]``.

    :param states: States with the PV first
    :type states: list of :class:`VehicleState`
    :type eq: :class:`EquilibriumPoint`
    """
    followers = states[1:]
    velocity = np.array([state.velocity for state in followers])
    spacing = np.array([state.spacing for state in followers])
    return np.concatenate([velocity - eq.v_star, spacing - eq.s_star])


def from_error_states(y, eq):
    """
    Invert :func:`to_error_states`.

    :return: ``(velocity, spacing)`` arrays of the followers
    :rtype: tuple
    """
    y = np.asarray(y, dtype=float)
    n = y.size // 2
    return y[:n] + eq.v_star, y[n:] + eq.s_star


def sample_headways(
    rng_seed, group_count=12, headway_range=(0.5, 2.9), per_group=2, resolution=0.001
):
    """
    Draw ``per_group`` distinct headways uniformly inside each of
    ``group_count`` equal sub-intervals of ``headway_range``.

    With a ``resolution`` the draws come from the grid of cell centres of that
    width inside each group; without one they are continuous.

    :raises ConfigError: If a group cannot hold ``per_group`` distinct values
    """
    low, high = float(headway_range[0]), float(headway_range[1])
    if not (high > low and group_count >= 1 and per_group >= 1):
        raise ConfigError("Invalid headway sampler configuration")
    width = (high - low) / group_count
    rng = np.random.default_rng(rng_seed)
    samples = []
    for group in range(group_count):
        start = low + group * width
        if resolution:
            cells = int(round(width / resolution))
            if per_group > cells:
                raise ConfigError(
                    f"Cannot draw {per_group} distinct headways from {cells} cells"
                )
            picks = rng.choice(cells, size=per_group, replace=False)
            values = start + (np.sort(picks) + 0.5) * resolution
        else:
            values = np.sort(rng.uniform(start, start + width, size=per_group))
        samples.extend(round(float(value), 9) for value in values)
    return samples


def headway_combinations(headways, hdv_count):
    """
    Every assignment of the sampled headways to ``hdv_count`` HDVs.
    """
    return list(itertools.product(headways, repeat=hdv_count))


_CYCLE_SHAPES = {
    "aggressive": {
        "start": 15.0,
        "low": (5.0, 10.0),
        "high": (16.0, 22.0),
        "accel": (2.5, 3.5),
        "decel": (2.5, 4.0),
        "cruise": (3.0, 15.0),
    },
    "mild": {
        "start": 15.0,
        "low": (10.0, 14.0),
        "high": (15.0, 19.0),
        "accel": (0.4, 1.0),
        "decel": (0.4, 1.0),
        "cruise": (10.0, 30.0),
    },
    "stop_and_go": {
        "start": 10.0,
        "low": (0.0, 0.0),
        "high": (6.0, 12.0),
        "accel": (0.8, 1.5),
        "decel": (1.0, 2.0),
        "cruise": (2.0, 8.0),
    },
}


def synth_cycle(kind, duration, dt, seed):
    """
    Generate a synthetic PV speed profile.

    The profile alternates cruise segments with half-cosine speed changes,
    starting with a slowdown. Aggressive ramps peak between 2.5 and 4 m/s^2.

    :param kind: One of ``aggressive``, ``mild`` or ``stop_and_go``
    :param duration: Length in s
    :param dt: Sample time in s
    :param seed: Random seed

    :rtype: :class:`SpeedProfile`
    """
    if kind not in _CYCLE_SHAPES:
        raise ConfigError(f"Unknown cycle kind {kind!r}")
    if not (duration > 0 and dt > 0):
        raise ConfigError("Cycle duration and dt must be positive")
    shape = _CYCLE_SHAPES[kind]
    total = int(round(duration / dt))
    rng = np.random.default_rng(seed)
    speed = shape["start"]
    samples = [speed]
    going_down = True
    while len(samples) < total:
        hold = int(round(rng.uniform(*shape["cruise"]) / dt))
        samples.extend([speed] * hold)
        target = rng.uniform(*(shape["low"] if going_down else shape["high"]))
        rate = rng.uniform(*(shape["decel"] if going_down else shape["accel"]))
        change = target - speed
        ramp = max(1, int(math.ceil(math.pi * abs(change) / (2 * rate) / dt)))
        steps = np.arange(1, ramp + 1) / ramp
        samples.extend(speed + change * (1 - np.cos(np.pi * steps)) / 2)
        speed = target
        going_down = not going_down
    return SpeedProfile(dt=dt, samples=np.clip(np.array(samples[:total]), 0.0, None))


def read_profile(path):
    """
    Read a ``t,v`` CSV speed profile.

    :raises ConfigError: If the file is malformed or not uniformly sampled
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"Unable to read speed profile {path}: {exc}")
    if list(frame.columns[:2]) != ["t", "v"]:
        raise ConfigError(f"Speed profile {path} needs a 't,v' header")
    times = frame["t"].to_numpy(dtype=float)
    if times.size < 2:
        raise ConfigError(f"Speed profile {path} needs at least two rows")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
        raise ConfigError(f"Speed profile {path} is not uniformly sampled")
    return SpeedProfile(dt=float(steps[0]), samples=frame["v"].to_numpy(dtype=float))


def write_profile(profile, path):
    """
    Write a speed profile as ``t,v`` CSV.
    """
    frame = pd.DataFrame(
        {"t": np.arange(len(profile)) * profile.dt, "v": profile.samples}
    )
    frame.to_csv(pathlib.Path(path), index=False)


def initial_states(profile, cfg, nominal=None):
    """
    Equilibrium start at the first PV sample.

    HDVs sit at their own IDM equilibrium spacing; CAVs at the spacing of the
    ``nominal`` IDM parameters (``cfg.idm`` by default).
    """
    if nominal is None:
        nominal = cfg.idm
    v0 = float(profile.samples[0])
    states = [VehicleState(position=0.0, velocity=v0, spacing=math.inf)]
    position = 0.0
    for i in range(1, cfg.n + 1):
        params = nominal if i in cfg.cav_indices else cfg.driver(i)
        spacing = idm_equilibrium_spacing(v0, params)
        position = position - spacing - cfg.vehicle_length
        states.append(VehicleState(position=position, velocity=v0, spacing=spacing))
    return states


def simulate(profile, cfg, cav_law, states=None):
    """
    Run the platoon over a speed profile with CAVs driven by ``cav_law``.

    :param cav_law: Callable ``(step, states) -> inputs``
    :raises CollisionError: With the partial log attached

    :rtype: :class:`padeepc.trajectory.TrajectoryLog`
    """
    steps = len(profile)
    dt = profile.dt
    trajectory = TrajectoryLog.allocate(steps, cfg.n, cfg.cav_indices, dt)
    if states is None:
        states = initial_states(profile, cfg)
    cav_columns = list(cfg.cav_indices)
    for k in range(steps):
        inputs = cav_law(k, states)
        v_next = profile.samples[min(k + 1, steps - 1)]
        accel = platoon_accelerations(states, inputs, v_next, dt, cfg)
        trajectory.record_states(k, states, accel)
        trajectory.u_applied[k] = accel[cav_columns]
        trajectory.solver_status[k] = LAW
        if k + 1 < steps:
            try:
                states = step_platoon(states, inputs, v_next, dt, cfg, step=k + 1)
            except CollisionError as exc:
                exc.log = trajectory.truncate(k + 1)
                log.error("Collision of vehicle %d at step %d", exc.index, k + 1)
                raise
    return trajectory


class LinearPlatoon:
    """
    Linearized error dynamics of a platoon around a fixed equilibrium speed.

    The state equals the output vector ``[v~_1..v~_n, s~_1..s~_n]``; the PV
    speed error enters as a disturbance. Forward Euler at ``cfg.dt``.
    """

    def __init__(self, cfg, v_star, y0=None):
        self.cfg = cfg
        n = cfg.n
        A = np.zeros((2 * n, 2 * n))
        B = np.zeros((2 * n, cfg.m))
        E = np.zeros(2 * n)
        for i in range(1, n + 1):
            v, s = i - 1, n + i - 1
            if i in cfg.cav_indices:
                B[v, cfg.cav_indices.index(i)] = 1.0
            else:
                a1, a2, a3 = linearize_idm(v_star, cfg.driver(i))
                A[v, s] = a1
                A[v, v] = -a2
                if i > 1:
                    A[v, v - 1] = a3
                else:
                    E[v] = a3
            A[s, v] = -1.0
            if i > 1:
                A[s, v - 1] = 1.0
            else:
                E[s] = 1.0
        self.A = np.eye(2 * n) + cfg.dt * A
        self.B = cfg.dt * B
        self.E = cfg.dt * E
        self.state = np.zeros(2 * n) if y0 is None else np.asarray(y0, dtype=float)

    def output(self):
        return self.state.copy()

    def step(self, u, pv_error=0.0):
        self.state = (
            self.A @ self.state
            + self.B @ np.asarray(u, dtype=float).reshape(-1)
            + self.E * pv_error
        )
        return self.output()
