# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Physics augmented eco-driving controller.

The controller augments the data program with kinematic equality rows, a
convex power cost and constant time headway spacing bounds, and keeps its
data library current by appending the latest closed-loop trajectory.
"""
import dataclasses
import logging
import math

import numpy as np

from .common import ConfigError, PadeepcException
from .deepc import (
    DecisionLayout,
    DeepcError,
    DeepcWeights,
    RecentWindow,
    SignalBounds,
    assemble_tracking_qp,
    data_equations,
    numerical_rank,
    regularization,
)
from .energy import convex_power_form
from .platoon import (
    CollisionError,
    EquilibriumPoint,
    initial_states,
    idm_equilibrium_spacing,
    platoon_accelerations,
    step_platoon,
)
from .qp import QpProblem, SolverSettings, Status, solve_qp
from .trajectory import COLD_START, FALLBACK, TrajectoryLog

log = logging.getLogger(__name__)

RELAXED_OPTIMAL = "RelaxedOptimal"
RELAXED_MAX_ITER = "RelaxedMaxIter"

#: Statuses under which the first planned input is applied.
ACCEPTED = (Status.OPTIMAL, Status.MAX_ITER)


class SpacingBoundsError(PadeepcException):
    """
    Raised when a spacing interval is empty.

    :ivar vehicle: Position of the offending CAV in ``cav_indices``
    """

    def __init__(self, vehicle, lower, upper):
        self.vehicle = vehicle
        super().__init__(
            f"Empty spacing interval [{lower:.3f}, {upper:.3f}] for CAV {vehicle}"
        )


class HankelUpdateError(PadeepcException):
    """
    Raised when an adaptation trajectory has the wrong shape.
    """


@dataclasses.dataclass(frozen=True)
class SpacingPolicy:
    t_h_loose: float = 1.0
    t_h_tight: float = 1.3
    TG_loose: float = 3.5
    TG_tight: float = 2.1
    s_gap: float = 2.0

    def __post_init__(self):
        if not (self.t_h_loose > 0 and self.t_h_tight > 0):
            raise ConfigError("Time headways must be positive")
        if not (self.TG_loose > self.t_h_loose and self.TG_tight > self.t_h_tight):
            raise ConfigError("Time gaps must exceed the matching time headways")

    @property
    def min_speed(self):
        """
        Predecessor speed below which the tight interval is empty.
        """
        return self.s_gap / (self.TG_tight - self.t_h_tight)


@dataclasses.dataclass(frozen=True)
class AdaptationPolicy:
    """
    Online library update policy.

    ``max_columns`` of ``None`` keeps the column count of the offline library.
    """

    enabled: bool = True
    update_stride: int = 1
    max_columns: int = None
    rank_check: bool = True

    def __post_init__(self):
        if self.update_stride < 1:
            raise ConfigError("adaptation.update_stride must be at least 1")
        if self.max_columns is not None and self.max_columns < 1:
            raise ConfigError("adaptation.max_columns must be positive")
        if not self.rank_check:
            raise ConfigError("adaptation.rank_check cannot be disabled")


@dataclasses.dataclass(frozen=True)
class ControllerConfig:
    """
    Controller settings; defaults follow the reference experiment.

    ``state_bound`` is the state dimension bound used for excitation checks,
    ``2 * n + 4`` when ``None``. ``power_scale`` converts watts into the cost
    units the power weight ``S`` applies to.
    """

    T: int = 1000
    T_ini: int = 20
    N: int = 40
    lambda_g: float = 20.0
    lambda_y: float = 1000.0
    S: float = 0.1
    R: float = 1.0
    Q: float = 1.0
    a_min: float = -5.0
    a_max: float = 4.0
    spacing: SpacingPolicy = SpacingPolicy()
    adaptation: AdaptationPolicy = AdaptationPolicy()
    nominal_headway: float = 1.5
    v_star_cap: float = 0.95
    power_scale: float = 1e-3
    state_bound: int = None
    tol: float = 1e-6
    max_iter: int = 4000

    def __post_init__(self):
        if self.T_ini < 1 or self.N < 2:
            raise ConfigError("controller needs T_ini >= 1 and N >= 2")
        if self.lambda_g < 0 or self.lambda_y < 0 or self.S < 0 or self.Q < 0:
            raise ConfigError("controller weights must be nonnegative")
        if not self.R > 0:
            raise ConfigError("controller.R must be positive")
        if not self.a_min < 0 < self.a_max:
            raise ConfigError("controller needs a_min < 0 < a_max")
        if not 0 < self.v_star_cap < 1:
            raise ConfigError("controller.v_star_cap must lie in (0, 1)")
        if not self.nominal_headway > 0:
            raise ConfigError("controller.nominal_headway must be positive")
        max_columns = self.adaptation.max_columns
        if max_columns is not None and max_columns < self.L:
            raise ConfigError(
                f"adaptation.max_columns={max_columns} is below the depth L={self.L}"
            )

    @property
    def L(self):
        return self.T_ini + self.N

    def min_columns(self, m):
        """
        Fewest library columns that can hold a full rank ``m`` input block.
        """
        return m * self.L

    def pe_order(self, n_vehicles):
        bound = self.state_bound if self.state_bound is not None else 2 * n_vehicles + 4
        return self.L + bound

    def weights(self):
        return DeepcWeights(Q=self.Q, R=self.R, lambda_g=self.lambda_g, lambda_y=self.lambda_y)


@dataclasses.dataclass(frozen=True)
class PhysicsRows:
    """
    Kinematic equality rows ``A [u; y] = 0`` over one prediction horizon.
    """

    A: np.ndarray

    @property
    def rows(self):
        return self.A.shape[0]

    def embed(self, layout):
        """
        Lift the rows onto the full ``(g, u, y, sigma_y)`` decision vector.
        """
        out = np.zeros((self.rows, layout.size))
        out[:, layout.u.start : layout.y.stop] = self.A
        return out


def physics_rows(topology, dt, N):
    """
    Kinematic rows of the first order error dynamics.

    CAV velocity rows ``v~_i(k+1) - v~_i(k) - a_i(k) dt = 0`` and spacing rows
    ``s~_i(k+1) - s~_i(k) - (v~_{i-1}(k) - v~_i(k)) dt = 0`` for every follower
    behind the first one, ``k = 0..N-2``.

    :param topology: The platoon layout
    :type topology: :class:`padeepc.platoon.PlatoonConfig`
    :param dt: Step in s
    :param N: Prediction horizon

    :rtype: :class:`PhysicsRows`
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    n, m = topology.n, topology.m
    p = 2 * n
    mu = m * N
    rows = []

    def y_col(k, channel):
        return mu + k * p + channel

    for k in range(N - 1):
        for j, i in enumerate(topology.cav_indices):
            row = np.zeros(mu + p * N)
            row[y_col(k + 1, i - 1)] = 1.0
            row[y_col(k, i - 1)] = -1.0
            row[k * m + j] = -dt
            rows.append(row)
        for i in range(2, n + 1):
            row = np.zeros(mu + p * N)
            row[y_col(k + 1, n + i - 1)] = 1.0
            row[y_col(k, n + i - 1)] = -1.0
            row[y_col(k, i - 2)] = -dt
            row[y_col(k, i - 1)] = dt
            rows.append(row)
    A = np.array(rows) if rows else np.zeros((0, mu + p * N))
    return PhysicsRows(A=A)


@dataclasses.dataclass(frozen=True)
class SpacingBounds:
    """
    Per-CAV spacing intervals in error coordinates, shape ``(m, 2)``.
    """

    loose: np.ndarray
    tight: np.ndarray
    params: SpacingPolicy

    def relaxed(self):
        return dataclasses.replace(self, tight=self.loose)


def spacing_bounds(v_f, params, s_star):
    """
    Constant time headway lower bounds and time gap upper bounds.

    :param v_f: Predecessor speed per CAV in m/s
    :param params: The spacing policy
    :type params: :class:`SpacingPolicy`
    :param s_star: Equilibrium spacing in m

    :raises SpacingBoundsError: If an interval is empty

    :rtype: :class:`SpacingBounds`
    """
    v_f = np.atleast_1d(np.asarray(v_f, dtype=float))
    if np.any(v_f < 0):
        raise ConfigError("Predecessor speeds must be nonnegative")
    loose = np.column_stack(
        [v_f * params.t_h_loose + params.s_gap - s_star, v_f * params.TG_loose - s_star]
    )
    tight = np.column_stack(
        [v_f * params.t_h_tight + params.s_gap - s_star, v_f * params.TG_tight - s_star]
    )
    for interval in (loose, tight):
        for vehicle, (lower, upper) in enumerate(interval):
            if lower > upper:
                raise SpacingBoundsError(vehicle, lower, upper)
    return SpacingBounds(loose=loose, tight=tight, params=params)


@dataclasses.dataclass(frozen=True)
class EcoCost:
    """
    Weights of the eco-driving program and one power form per follower.
    """

    S: float
    R: float
    lambda_g: float
    lambda_y: float
    forms: tuple
    power_scale: float = 1e-3

    def __post_init__(self):
        if self.S < 0 or self.lambda_g < 0 or self.lambda_y < 0 or not self.R > 0:
            raise ConfigError("Eco cost weights must be nonnegative with R > 0")


def _power_terms(layout, topology, dt):
    """
    Speed and acceleration selectors for every power sample in the horizon.

    :return: ``(Dv, Da, vehicle)`` where rows of ``Dv``/``Da`` map the decision
        vector to the speed error and acceleration of one sample
    """
    n, N = topology.n, layout.N
    p, m = layout.p, layout.m
    y0, u0 = layout.y.start, layout.u.start
    Dv, Da, vehicle = [], [], []
    for i in range(1, n + 1):
        cav = i in topology.cav_indices
        for k in range(N if cav else N - 1):
            dv = np.zeros(layout.size)
            da = np.zeros(layout.size)
            dv[y0 + k * p + i - 1] = 1.0
            if cav:
                da[u0 + k * m + topology.cav_indices.index(i)] = 1.0
            else:
                da[y0 + (k + 1) * p + i - 1] = 1.0 / dt
                da[y0 + k * p + i - 1] = -1.0 / dt
            Dv.append(dv)
            Da.append(da)
            vehicle.append(i)
    return np.array(Dv), np.array(Da), np.array(vehicle)


def assemble_eco_qp(lib, win, cost, bounds, phys, actuator, eq, topology, dt, skip_first=False):
    """
    The eco-driving program over ``z = (g, u, y, sigma_y)``.

    Minimizes ``S * sum P~ + sum |u_k|_R^2 + lambda_g |g|^2 + lambda_y
    |sigma_y|^2`` where ``P~`` is the convex power estimate of every follower
    evaluated at speed ``v~ + v*``. CAV accelerations come from ``u``; HDV
    accelerations are finite differences of predicted speed.

    Constraints are the data equations, the kinematic rows, the actuator box
    and CAV spacing boxes: loose for ``k = 0..N-2``, tight at ``k = N-1``.

    :param actuator: ``(a_min, a_max)``
    :param eq: The equilibrium the window is expressed around
    :type eq: :class:`padeepc.platoon.EquilibriumPoint`
    :param skip_first: Leave the spacing of ``k = 0`` unbounded

    :rtype: :class:`padeepc.qp.QpProblem`
    """
    layout = DecisionLayout.of(lib)
    if len(cost.forms) != topology.n:
        raise DeepcError(f"Expected {topology.n} power forms, got {len(cost.forms)}")
    if lib.p != topology.p or lib.m != topology.m:
        raise DeepcError("Library dimensions do not match the platoon")
    A_eq, b_eq = data_equations(lib, win)
    if phys is not None and phys.rows:
        A_eq = np.vstack([A_eq, phys.embed(layout)])
        b_eq = np.concatenate([b_eq, np.zeros(phys.rows)])
    diag, lb, ub = regularization(
        lib, DeepcWeights(R=cost.R, lambda_g=cost.lambda_g, lambda_y=cost.lambda_y)
    )
    diag[layout.u] = 2 * cost.R
    H = np.diag(diag)
    f = np.zeros(layout.size)

    if cost.S > 0:
        Dv, Da, vehicle = _power_terms(layout, topology, dt)
        forms = [cost.forms[i - 1] for i in vehicle]
        weight = cost.S * cost.power_scale
        c_vv = np.array([form.c_vv for form in forms])
        c_aa = np.array([form.c_aa for form in forms])
        c_va = np.array([form.c_va for form in forms])
        H += 2 * weight * (
            Dv.T @ (c_vv[:, None] * Dv)
            + Da.T @ (c_aa[:, None] * Da)
            + 0.5 * Dv.T @ (c_va[:, None] * Da)
            + 0.5 * Da.T @ (c_va[:, None] * Dv)
        )
        lin_v = np.array([2 * form.c_vv * eq.v_star + form.c_v for form in forms])
        lin_a = np.array([form.c_va * eq.v_star + form.c_a for form in forms])
        f += weight * (Dv.T @ lin_v + Da.T @ lin_a)

    lb[layout.u] = actuator[0]
    ub[layout.u] = actuator[1]
    n, p = topology.n, topology.p
    for j, i in enumerate(topology.cav_indices):
        for k in range(lib.N):
            if skip_first and k == 0:
                continue
            interval = bounds.tight[j] if k == lib.N - 1 else bounds.loose[j]
            col = layout.y.start + k * p + n + i - 1
            lb[col], ub[col] = interval
    return QpProblem(H=H, f=f, A_eq=A_eq, b_eq=b_eq, lb=lb, ub=ub)


def hankel_update(lib, u_traj, y_traj, policy):
    """
    Append one length ``L`` trajectory as a new library column.

    Oldest columns are dropped first when the library is at
    ``policy.max_columns``. The candidate is accepted only if the input block
    keeps its rank.

    :raises HankelUpdateError: If the trajectory has the wrong shape

    :return: ``(library, accepted)``; the original library when rejected
    :rtype: tuple
    """
    u_traj = np.asarray(u_traj, dtype=float).reshape(-1)
    y_traj = np.asarray(y_traj, dtype=float).reshape(-1)
    if u_traj.size != lib.m * lib.L or y_traj.size != lib.p * lib.L:
        raise HankelUpdateError(
            f"Adaptation trajectory of {u_traj.size}/{y_traj.size} samples does "
            f"not span L={lib.L} steps"
        )
    limit = policy.max_columns if policy.max_columns is not None else lib.K
    if limit < lib.m * lib.L:
        raise HankelUpdateError(
            f"max_columns={limit} cannot hold a rank {lib.m * lib.L} input block"
        )
    drop = max(0, lib.K + 1 - limit)
    H_u = np.column_stack([lib.H_u[:, drop:], u_traj])
    H_y = np.column_stack([lib.H_y[:, drop:], y_traj])
    if numerical_rank(H_u) != lib.input_rank:
        log.debug("Rejected library update, input rank changed")
        return lib, False
    return lib.with_columns(H_u, H_y), True


@dataclasses.dataclass
class StepResult:
    inputs: np.ndarray
    status: str
    relaxed: bool = False
    fault: bool = False
    prediction: np.ndarray = None


class PaDeepcController:
    """
    Receding horizon controller for the CAVs of one platoon.

    Call :meth:`control_step` once per sample with the measured states. The
    first ``T_ini`` calls coast while the window fills.

    :param lib: The offline (generalized) library
    :type lib: :class:`padeepc.deepc.HankelLibrary`
    :param topology: The platoon layout
    :type topology: :class:`padeepc.platoon.PlatoonConfig`
    :param cfg: Controller settings
    :type cfg: :class:`ControllerConfig`
    :param coeffs: Power surrogate coefficients
    :type coeffs: :class:`padeepc.energy.PolyCoefficients`
    :param tracking: Use the plain tracking program without physics rows,
        power cost or adaptation
    """

    def __init__(self, lib, topology, cfg, coeffs, tracking=False, adapt=None):
        if lib.T_ini != cfg.T_ini or lib.N != cfg.N:
            raise ConfigError(
                f"Library horizons ({lib.T_ini}, {lib.N}) differ from the "
                f"controller ({cfg.T_ini}, {cfg.N})"
            )
        if lib.m != topology.m or lib.p != topology.p:
            raise ConfigError("Library dimensions do not match the platoon")
        max_columns = cfg.adaptation.max_columns
        if max_columns is not None and max_columns < cfg.min_columns(lib.m):
            raise ConfigError(
                f"adaptation.max_columns={max_columns} cannot hold a rank "
                f"{cfg.min_columns(lib.m)} input block"
            )
        self.lib = lib
        self.topology = topology
        self.cfg = cfg
        self.coeffs = coeffs
        self.tracking = tracking
        self.adapt = cfg.adaptation.enabled if adapt is None else adapt
        self.nominal = dataclasses.replace(topology.idm, T_headway=cfg.nominal_headway)
        self.phys = None if tracking else physics_rows(topology, topology.dt, cfg.N)
        self.settings = SolverSettings()
        self.accepted_updates = 0
        self.rejected_updates = 0
        self._outputs = []
        self._inputs = []
        self._pv = []
        self._prediction = None
        self._warm = None
        self._since_update = 0

    @property
    def step_count(self):
        return len(self._inputs)

    def equilibrium(self):
        """
        Equilibrium from the mean PV speed over the window.
        """
        v_star = float(np.mean(self._pv[-self.cfg.T_ini :]))
        v_star = min(v_star, self.cfg.v_star_cap * self.nominal.v_d)
        return EquilibriumPoint(v_star, idm_equilibrium_spacing(v_star, self.nominal))

    def _offset(self, eq):
        n = self.topology.n
        return np.concatenate([np.full(n, eq.v_star), np.full(n, eq.s_star)])

    def _measure(self, states):
        followers = states[1:]
        return np.array(
            [state.velocity for state in followers] + [state.spacing for state in followers]
        )

    def prediction_error(self, states):
        """
        Absolute error of the last one-step prediction against ``states``.

        :return: ``(velocity, spacing)`` per follower, ``nan`` without a prediction
        """
        n = self.topology.n
        if self._prediction is None:
            return np.full(n, np.nan), np.full(n, np.nan)
        error = np.abs(self._measure(states) - self._prediction)
        return error[:n], error[n:]

    def _adapt(self, eq):
        L = self.lib.L
        if len(self._inputs) < L:
            return
        self._since_update += 1
        if self._since_update < self.cfg.adaptation.update_stride:
            return
        self._since_update = 0
        offset = self._offset(eq)
        u_traj = np.array(self._inputs[-L:])
        y_traj = np.array(self._outputs[-L:]) - offset
        self.lib, accepted = hankel_update(self.lib, u_traj, y_traj, self.cfg.adaptation)
        if accepted:
            self.accepted_updates += 1
        else:
            self.rejected_updates += 1

    def _fallback(self, states):
        dt = self.topology.dt
        b_max = self.topology.idm.b_max
        inputs = []
        for i in self.topology.cav_indices:
            closing = states[i].velocity - states[i - 1].velocity
            inputs.append(min(max(b_max, -closing / dt), self.cfg.a_max))
        return np.array(inputs)

    def _problem(self, window, eq, states, relaxed):
        cfg = self.cfg
        v_f = [
            max(states[i - 1].velocity, 1.05 * cfg.spacing.min_speed)
            for i in self.topology.cav_indices
        ]
        bounds = spacing_bounds(v_f, cfg.spacing, eq.s_star)
        if relaxed:
            bounds = bounds.relaxed()
        if self.tracking:
            n = self.topology.n
            y_min = np.full(self.topology.p, -np.inf)
            y_max = np.full(self.topology.p, np.inf)
            for j, i in enumerate(self.topology.cav_indices):
                y_min[n + i - 1], y_max[n + i - 1] = bounds.loose[j]
            box = SignalBounds(u_min=cfg.a_min, u_max=cfg.a_max, y_min=y_min, y_max=y_max)
            return assemble_tracking_qp(self.lib, window, cfg.weights(), box)
        form = convex_power_form(eq.v_star, self.coeffs)
        cost = EcoCost(
            S=cfg.S,
            R=cfg.R,
            lambda_g=cfg.lambda_g,
            lambda_y=cfg.lambda_y,
            forms=(form,) * self.topology.n,
            power_scale=cfg.power_scale,
        )
        return assemble_eco_qp(
            self.lib,
            window,
            cost,
            bounds,
            self.phys,
            (cfg.a_min, cfg.a_max),
            eq,
            self.topology,
            self.topology.dt,
            skip_first=relaxed,
        )

    def _solve(self, problem):
        warm = self._warm if self._warm is not None and self._warm.size == problem.n else None
        return solve_qp(
            problem,
            tol_primal=self.cfg.tol,
            tol_dual=self.cfg.tol,
            max_iter=self.cfg.max_iter,
            settings=self.settings,
            warm_start=warm,
        )

    def control_step(self, states):
        """
        Compute the CAV accelerations for the current sample.

        :param states: Measured states, PV first
        :type states: list of :class:`padeepc.platoon.VehicleState`

        :rtype: :class:`StepResult`
        """
        cfg = self.cfg
        T_ini = cfg.T_ini
        measured = self._measure(states)
        if len(self._inputs) < T_ini:
            inputs = np.zeros(self.topology.m)
            self._record(states, measured, inputs, None)
            return StepResult(inputs=inputs, status=COLD_START)

        eq = self.equilibrium()
        if self.adapt and not self.tracking:
            self._adapt(eq)
        offset = self._offset(eq)
        window = RecentWindow.from_history(
            np.array(self._inputs[-T_ini:]), np.array(self._outputs[-T_ini:]) - offset
        )
        layout = DecisionLayout.of(self.lib)

        relaxed = False
        solution = self._solve(self._problem(window, eq, states, relaxed=False))
        if solution.status == Status.PRIMAL_INFEASIBLE and not self.tracking:
            log.debug("Step %d infeasible, relaxing terminal bounds", self.step_count)
            relaxed = True
            solution = self._solve(self._problem(window, eq, states, relaxed=True))

        if solution.status not in ACCEPTED:
            log.warning(
                "Controller fault at step %d (%s), falling back to safe braking",
                self.step_count,
                solution.status.value,
            )
            inputs = self._fallback(states)
            self._warm = None
            self._record(states, measured, inputs, None)
            return StepResult(inputs=inputs, status=FALLBACK, relaxed=relaxed, fault=True)

        if solution.status == Status.MAX_ITER:
            log.warning("Solver hit its iteration limit at step %d", self.step_count)
        if relaxed:
            status = RELAXED_OPTIMAL if solution.status == Status.OPTIMAL else RELAXED_MAX_ITER
        else:
            status = solution.status.value
        self._warm = solution.z_star
        _, u_plan, y_plan, _ = layout.split(solution.z_star)
        inputs = np.clip(u_plan[0], cfg.a_min, cfg.a_max)
        prediction = y_plan[1] + offset
        self._record(states, measured, inputs, prediction)
        return StepResult(
            inputs=inputs, status=status, relaxed=relaxed, prediction=prediction
        )

    def _record(self, states, measured, inputs, prediction):
        self._outputs.append(measured)
        self._pv.append(states[0].velocity)
        self._prediction = prediction
        # Adaptation columns carry the acceleration actually applied.
        applied = platoon_accelerations(
            states, inputs, states[0].velocity, self.topology.dt, self.topology
        )
        self._inputs.append(applied[list(self.topology.cav_indices)])


def run_closed_loop(
    profile,
    topology,
    cfg,
    lib,
    coeffs,
    tracking=False,
    adapt=None,
    states=None,
    controller=None,
    plant_schedule=None,
):
    """
    Drive the platoon over ``profile`` with the controller in the loop.

    Pass a prepared ``controller`` to inspect its adapted library afterwards.
    ``plant_schedule`` maps a step to the platoon configuration (for example
    new HDV headways) the plant switches to at that step; the controller keeps
    its own view.

    :raises padeepc.platoon.CollisionError: With the partial log attached

    :rtype: :class:`padeepc.trajectory.TrajectoryLog`
    """
    if controller is None:
        controller = PaDeepcController(
            lib, topology, cfg, coeffs, tracking=tracking, adapt=adapt
        )
    steps = len(profile)
    dt = profile.dt
    if not math.isclose(dt, topology.dt):
        raise ConfigError(f"Profile dt {dt} differs from platoon dt {topology.dt}")
    trajectory = TrajectoryLog.allocate(steps, topology.n, topology.cav_indices, dt)
    if states is None:
        states = initial_states(profile, topology)
    cav_columns = list(topology.cav_indices)
    plant = topology
    for k in range(steps):
        if plant_schedule and k in plant_schedule:
            plant = plant_schedule[k]
            log.info("Plant drivers changed at step %d", k)
        err_v, err_s = controller.prediction_error(states)
        trajectory.pred_err_v[k] = err_v
        trajectory.pred_err_s[k] = err_s
        result = controller.control_step(states)
        v_next = profile.samples[min(k + 1, steps - 1)]
        accel = platoon_accelerations(states, result.inputs, v_next, dt, plant)
        trajectory.record_states(k, states, accel)
        trajectory.u_applied[k] = accel[cav_columns]
        trajectory.solver_status[k] = result.status
        trajectory.relaxed[k] = result.relaxed
        trajectory.fault[k] = result.fault
        if k + 1 < steps:
            try:
                states = step_platoon(states, result.inputs, v_next, dt, plant, step=k + 1)
            except CollisionError as exc:
                exc.log = trajectory.truncate(k + 1)
                log.error("Collision of vehicle %d at step %d", exc.index, k + 1)
                raise
    log.info(
        "Closed loop finished: %d steps, %d relaxed, %d faults, %d/%d updates accepted",
        steps,
        int(trajectory.relaxed.sum()),
        int(trajectory.fault.sum()),
        controller.accepted_updates,
        controller.accepted_updates + controller.rejected_updates,
    )
    return trajectory
