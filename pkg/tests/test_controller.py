# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
import dataclasses
from types import SimpleNamespace
from unittest.mock import patch

import numpy as np
import pytest

from padeepc.collect import collection_equilibrium
from padeepc.common import ConfigError
from padeepc.controller import (
    ACCEPTED,
    RELAXED_MAX_ITER,
    RELAXED_OPTIMAL,
    AdaptationPolicy,
    ControllerConfig,
    EcoCost,
    HankelUpdateError,
    PaDeepcController,
    SpacingBounds,
    SpacingBoundsError,
    SpacingPolicy,
    assemble_eco_qp,
    hankel_update,
    physics_rows,
    run_closed_loop,
    spacing_bounds,
)
from padeepc.deepc import (
    DecisionLayout,
    HankelLibrary,
    RecentWindow,
    SignalBounds,
    assemble_tracking_qp,
    gen_excitation,
)
from padeepc.energy import convex_power_form
from padeepc.platoon import (
    EquilibriumPoint,
    LinearPlatoon,
    PlatoonConfig,
    SpeedProfile,
    initial_states,
)
from padeepc.qp import Status, solve_qp
from padeepc.trajectory import COLD_START, FALLBACK

SOLVED = {Status.OPTIMAL.value, Status.MAX_ITER.value, RELAXED_OPTIMAL, RELAXED_MAX_ITER}


@pytest.fixture
def cruise(cfg):
    return SpeedProfile(dt=cfg.platoon.dt, samples=np.full(40, 15.0))


@pytest.fixture
def controller(cfg, lib, coeffs):
    return PaDeepcController(lib, cfg.platoon, cfg.controller, coeffs)


def warm_up(controller, states):
    for _ in range(controller.cfg.T_ini):
        assert controller.control_step(states).status == COLD_START


def test_spacing_policy_min_speed():
    assert SpacingPolicy().min_speed == pytest.approx(2.5)


def test_spacing_policy_validation():
    with pytest.raises(ConfigError):
        SpacingPolicy(TG_tight=1.0)


def test_spacing_bounds_values():
    bounds = spacing_bounds([10.0], SpacingPolicy(), 20.0)
    np.testing.assert_allclose(bounds.loose, [[-8.0, 15.0]])
    np.testing.assert_allclose(bounds.tight, [[-5.0, 1.0]])
    np.testing.assert_array_equal(bounds.relaxed().tight, bounds.loose)


def test_spacing_bounds_empty_interval():
    with pytest.raises(SpacingBoundsError) as exc:
        spacing_bounds([10.0, 1.0], SpacingPolicy(), 5.0)
    assert exc.value.vehicle == 1


def test_controller_config_validation():
    with pytest.raises(ConfigError):
        ControllerConfig(R=0.0)
    with pytest.raises(ConfigError):
        ControllerConfig(a_min=1.0)
    with pytest.raises(ConfigError):
        ControllerConfig(S=-1.0)
    with pytest.raises(ConfigError):
        AdaptationPolicy(update_stride=0)
    with pytest.raises(ConfigError, match="max_columns"):
        ControllerConfig(T_ini=5, N=10, adaptation=AdaptationPolicy(max_columns=14))
    assert ControllerConfig(T_ini=5, N=10).min_columns(2) == 30


def test_pe_order(cfg):
    assert cfg.controller.pe_order(2) == 5 + 10 + 8
    assert dataclasses.replace(cfg.controller, state_bound=3).pe_order(2) == 18


def test_physics_rows_hold_on_kinematic_trajectory():
    topology = PlatoonConfig(n=3, cav_indices=(1, 3), hdv_headways=(1.5,))
    dt, N = 0.1, 6
    phys = physics_rows(topology, dt, N)
    assert phys.rows == (N - 1) * (topology.m + topology.n - 1)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(N, 2))
    v = np.zeros((N, 3))
    s = np.zeros((N, 3))
    v[0] = rng.normal(size=3)
    s[0] = rng.normal(size=3)
    v[:, 1] = rng.normal(size=N)
    s[:, 0] = rng.normal(size=N)
    for k in range(N - 1):
        v[k + 1, 0] = v[k, 0] + u[k, 0] * dt
        v[k + 1, 2] = v[k, 2] + u[k, 1] * dt
        s[k + 1, 1] = s[k, 1] + (v[k, 0] - v[k, 1]) * dt
        s[k + 1, 2] = s[k, 2] + (v[k, 1] - v[k, 2]) * dt
    y = np.hstack([v, s])
    np.testing.assert_allclose(phys.A @ np.concatenate([u.ravel(), y.ravel()]), 0.0, atol=1e-12)
    y[3, 0] += 1.0
    assert np.abs(phys.A @ np.concatenate([u.ravel(), y.ravel()])).max() > 0.5


def test_physics_rows_single_cav():
    topology = PlatoonConfig(n=1, cav_indices=(1,))
    assert physics_rows(topology, 0.1, 4).rows == 3


def _square_library(H_u):
    H_u = np.asarray(H_u, dtype=float)
    return HankelLibrary(H_u, np.zeros((2, H_u.shape[1])), m=1, p=1, T_ini=1, N=1)


def test_hankel_update_fifo():
    lib = _square_library(np.eye(2))
    updated, accepted = hankel_update(lib, [1.0, 0.0], [3.0, 4.0], AdaptationPolicy())
    assert accepted
    assert updated.K == 2
    np.testing.assert_array_equal(updated.H_u, [[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(updated.H_y[:, -1], [3.0, 4.0])


def test_hankel_update_grows_to_max_columns():
    lib = _square_library(np.eye(2))
    updated, accepted = hankel_update(
        lib, [1.0, 1.0], [0.0, 0.0], AdaptationPolicy(max_columns=3)
    )
    assert accepted
    assert updated.K == 3


def test_hankel_update_rejects_rank_loss():
    lib = _square_library(np.eye(2))
    updated, accepted = hankel_update(lib, [0.0, 1.0], [0.0, 0.0], AdaptationPolicy())
    assert not accepted
    assert updated is lib


def test_hankel_update_wrong_shape():
    lib = _square_library(np.eye(2))
    with pytest.raises(HankelUpdateError):
        hankel_update(lib, [1.0, 0.0, 0.0], [0.0, 0.0], AdaptationPolicy())
    with pytest.raises(HankelUpdateError):
        hankel_update(lib, [1.0, 0.0], [0.0, 0.0], AdaptationPolicy(max_columns=1))


def _eco_problem(cfg, lib, coeffs, S=0.1, skip_first=False):
    topology = cfg.platoon
    ctrl = cfg.controller
    eq = collection_equilibrium(cfg)
    window = RecentWindow.from_history(
        np.zeros((ctrl.T_ini, topology.m)), np.zeros((ctrl.T_ini, topology.p))
    )
    cost = EcoCost(
        S=S,
        R=ctrl.R,
        lambda_g=ctrl.lambda_g,
        lambda_y=ctrl.lambda_y,
        forms=(convex_power_form(eq.v_star, coeffs),) * topology.n,
    )
    bounds = spacing_bounds([eq.v_star], ctrl.spacing, eq.s_star)
    problem = assemble_eco_qp(
        lib,
        window,
        cost,
        bounds,
        physics_rows(topology, topology.dt, ctrl.N),
        (ctrl.a_min, ctrl.a_max),
        eq,
        topology,
        topology.dt,
        skip_first=skip_first,
    )
    return problem, bounds


def test_eco_qp_at_equilibrium(cfg, lib, coeffs):
    problem, bounds = _eco_problem(cfg, lib, coeffs)
    sol = solve_qp(problem)
    assert sol.status in ACCEPTED
    layout = DecisionLayout.of(lib)
    _, u_plan, y_plan, _ = layout.split(sol.z_star)
    assert np.all(u_plan >= cfg.controller.a_min - 1e-4)
    assert np.all(u_plan <= cfg.controller.a_max + 1e-4)
    spacing = y_plan[:, cfg.platoon.n]
    assert np.all(spacing[:-1] >= bounds.loose[0, 0] - 1e-4)
    assert np.all(spacing[:-1] <= bounds.loose[0, 1] + 1e-4)
    assert bounds.tight[0, 0] - 1e-4 <= spacing[-1] <= bounds.tight[0, 1] + 1e-4


def test_eco_qp_power_cost_enters_hessian(cfg, lib, coeffs):
    with_power, _ = _eco_problem(cfg, lib, coeffs, S=0.1)
    without_power, _ = _eco_problem(cfg, lib, coeffs, S=0.0)
    layout = DecisionLayout.of(lib)
    assert not np.allclose(with_power.H[layout.y, layout.y], without_power.H[layout.y, layout.y])
    np.testing.assert_array_equal(with_power.H[layout.g, layout.g], without_power.H[layout.g, layout.g])


def test_eco_qp_skip_first_spacing(cfg, lib, coeffs):
    problem, _ = _eco_problem(cfg, lib, coeffs, skip_first=True)
    layout = DecisionLayout.of(lib)
    first = layout.y.start + cfg.platoon.n
    second = first + cfg.platoon.p
    assert problem.lb[first] == -np.inf
    assert np.isfinite(problem.lb[second])


def test_controller_rejects_mismatched_library(cfg, lib, coeffs):
    ctrl = dataclasses.replace(cfg.controller, N=12)
    with pytest.raises(ConfigError):
        PaDeepcController(lib, cfg.platoon, ctrl, coeffs)


def test_equilibrium_speed_capped(controller, cfg):
    states = initial_states(SpeedProfile(dt=0.1, samples=[24.9]), cfg.platoon)
    warm_up(controller, states)
    assert controller.equilibrium().v_star == pytest.approx(0.95 * cfg.platoon.idm.v_d)


def test_control_step_predicts(controller, cfg, cruise):
    states = initial_states(cruise, cfg.platoon)
    warm_up(controller, states)
    v_err, _ = controller.prediction_error(states)
    assert np.all(np.isnan(v_err))
    result = controller.control_step(states)
    assert result.status in SOLVED
    assert result.inputs.shape == (cfg.platoon.m,)
    assert result.prediction.shape == (cfg.platoon.p,)
    v_err, s_err = controller.prediction_error(states)
    assert np.all(np.isfinite(v_err)) and np.all(np.isfinite(s_err))


def test_solver_fault_falls_back(controller, cfg, cruise):
    states = initial_states(cruise, cfg.platoon)
    warm_up(controller, states)
    failed = SimpleNamespace(status=Status.DUAL_INFEASIBLE)
    with patch.object(controller, "_solve", return_value=failed):
        result = controller.control_step(states)
    assert result.status == FALLBACK
    assert result.fault
    assert result.prediction is None
    assert np.all(result.inputs >= cfg.platoon.idm.b_max)


def test_infeasible_step_relaxes(controller, cfg, cruise):
    states = initial_states(cruise, cfg.platoon)
    warm_up(controller, states)
    real_solve = controller._solve
    problems = []

    def solve(problem):
        problems.append(problem)
        if len(problems) == 1:
            return SimpleNamespace(status=Status.PRIMAL_INFEASIBLE)
        return real_solve(problem)

    with patch.object(controller, "_solve", side_effect=solve):
        result = controller.control_step(states)
    assert result.relaxed
    assert result.status in (RELAXED_OPTIMAL, RELAXED_MAX_ITER)
    layout = DecisionLayout.of(controller.lib)
    assert problems[1].lb[layout.y.start + cfg.platoon.n] == -np.inf


def test_tracking_controller(cfg, lib, coeffs, cruise):
    controller = PaDeepcController(lib, cfg.platoon, cfg.controller, coeffs, tracking=True)
    states = initial_states(cruise, cfg.platoon)
    warm_up(controller, states)
    assert controller.phys is None
    assert controller.control_step(states).status in SOLVED


def test_closed_loop_cruise(cfg, lib, coeffs, cruise):
    controller = PaDeepcController(lib, cfg.platoon, cfg.controller, coeffs)
    real_solve = controller._solve
    solved = []

    def solve(problem):
        solution = real_solve(problem)
        solved.append(solution)
        return solution

    with patch.object(controller, "_solve", side_effect=solve):
        trajectory = run_closed_loop(
            cruise, cfg.platoon, cfg.controller, lib, coeffs, controller=controller
        )
    T_ini = cfg.controller.T_ini
    assert trajectory.steps == len(cruise)
    assert np.all(trajectory.solver_status[:T_ini] == COLD_START)
    assert set(trajectory.solver_status[T_ini:]) <= SOLVED
    assert not trajectory.fault.any()
    assert np.all(np.isnan(trajectory.pred_err_v[: T_ini + 1]))
    assert np.all(trajectory.spacing[:, 1:] > 0)
    assert np.all(trajectory.u_applied >= cfg.controller.a_min - 1e-9)
    assert np.all(trajectory.u_applied <= cfg.controller.a_max + 1e-9)
    rows = controller.phys.embed(DecisionLayout.of(lib))
    optimal = [sol for sol in solved if sol.status == Status.OPTIMAL]
    assert optimal
    for sol in optimal:
        assert np.abs(rows @ sol.z_star).max() <= cfg.controller.tol + 1e-9


def test_equilibrium_is_a_fixed_point(cfg, lib, coeffs, cruise):
    ctrl = dataclasses.replace(cfg.controller, S=0.0)
    trajectory = run_closed_loop(cruise, cfg.platoon, ctrl, lib, coeffs)
    T_ini = ctrl.T_ini
    assert np.all(trajectory.solver_status[T_ini:] == Status.OPTIMAL.value)
    assert np.abs(trajectory.u_applied).max() <= 0.05
    np.testing.assert_allclose(trajectory.velocity, 15.0, atol=1e-3)


def test_closed_loop_is_deterministic(cfg, lib, coeffs, cruise):
    first = run_closed_loop(cruise, cfg.platoon, cfg.controller, lib, coeffs)
    second = run_closed_loop(cruise, cfg.platoon, cfg.controller, lib, coeffs)
    np.testing.assert_array_equal(first.velocity, second.velocity)
    np.testing.assert_array_equal(first.spacing, second.spacing)
    np.testing.assert_array_equal(first.u_applied, second.u_applied)
    np.testing.assert_array_equal(first.pred_err_v, second.pred_err_v)
    assert list(first.solver_status) == list(second.solver_status)


def test_closed_loop_adapts_library(cfg, lib, coeffs, cruise):
    controller = PaDeepcController(lib, cfg.platoon, cfg.controller, coeffs, adapt=True)
    run_closed_loop(
        cruise, cfg.platoon, cfg.controller, lib, coeffs, controller=controller
    )
    L = cfg.controller.L
    assert controller.accepted_updates + controller.rejected_updates == len(cruise) - L
    assert controller.lib.K == lib.K


def test_closed_loop_needs_matching_dt(cfg, lib, coeffs):
    profile = SpeedProfile(dt=0.2, samples=np.full(10, 15.0))
    with pytest.raises(ConfigError):
        run_closed_loop(profile, cfg.platoon, cfg.controller, lib, coeffs)


def test_spacing_bounds_at_cruise_speed():
    bounds = spacing_bounds([15.0], SpacingPolicy(), 26.26)
    np.testing.assert_allclose(bounds.loose, [[-9.26, 26.24]], atol=1e-9)
    zero = spacing_bounds([0.0], SpacingPolicy(), 1.0)
    assert zero.loose[0, 0] == pytest.approx(SpacingPolicy().s_gap - 1.0)
    # The tight interval sits inside the loose one.
    assert bounds.loose[0, 0] <= bounds.tight[0, 0] <= bounds.tight[0, 1] <= bounds.loose[0, 1]


def test_zero_power_weight_matches_tracking(cfg, lib, coeffs):
    topology = cfg.platoon
    ctrl = cfg.controller
    eq = collection_equilibrium(cfg)
    rng = np.random.default_rng(3)
    window = RecentWindow.from_history(
        0.1 * rng.normal(size=(ctrl.T_ini, topology.m)),
        0.1 * rng.normal(size=(ctrl.T_ini, topology.p)),
    )
    bounds = spacing_bounds([eq.v_star], ctrl.spacing, eq.s_star).relaxed()
    cost = EcoCost(
        S=0.0,
        R=ctrl.R,
        lambda_g=ctrl.lambda_g,
        lambda_y=ctrl.lambda_y,
        forms=(convex_power_form(eq.v_star, coeffs),) * topology.n,
    )
    eco = assemble_eco_qp(
        lib, window, cost, bounds, None, (ctrl.a_min, ctrl.a_max), eq, topology, topology.dt
    )
    y_min = np.full(topology.p, -np.inf)
    y_max = np.full(topology.p, np.inf)
    y_min[topology.n], y_max[topology.n] = bounds.loose[0]
    box = SignalBounds(u_min=ctrl.a_min, u_max=ctrl.a_max, y_min=y_min, y_max=y_max)
    weights = dataclasses.replace(ctrl, Q=0.0).weights()
    tracking = assemble_tracking_qp(lib, window, weights, box)
    for name in ("H", "f", "A_eq", "b_eq", "lb", "ub"):
        np.testing.assert_array_equal(getattr(eco, name), getattr(tracking, name))
    first = solve_qp(eco)
    second = solve_qp(tracking)
    assert first.status == second.status
    np.testing.assert_allclose(first.z_star, second.z_star, atol=1e-8)


def test_physics_rows_match_linear_platoon():
    """
    Data from the linearized platoon; the predicted outputs of the kinematic
    program follow the same model when it replays the planned inputs.
    """
    topology = PlatoonConfig(n=2, cav_indices=(1,), hdv_headways=(1.5,))
    v_star, T_ini, N = 15.0, 3, 6
    u_data = gen_excitation(1, 120, amp=0.5, seed=21, order=T_ini + N + 2 * topology.n)
    plant = LinearPlatoon(topology, v_star)
    y_data = [plant.output()]
    for u in u_data[:-1]:
        y_data.append(plant.step(u))
    lib = HankelLibrary.from_data(u_data, np.array(y_data), T_ini=T_ini, N=N)

    rng = np.random.default_rng(5)
    plant = LinearPlatoon(topology, v_star, y0=[0.3, -0.2, 0.5, -0.4])
    u_hist = 0.3 * rng.normal(size=(T_ini, 1))
    y_hist = [plant.output()]
    for u in u_hist[:-1]:
        y_hist.append(plant.step(u))
    x_now = plant.step(u_hist[-1])
    window = RecentWindow.from_history(u_hist, np.array(y_hist))

    phys = physics_rows(topology, topology.dt, N)
    eq = EquilibriumPoint(v_star, 26.26)
    bounds = SpacingBounds(
        loose=np.array([[-50.0, 50.0]]), tight=np.array([[-50.0, 50.0]]), params=SpacingPolicy()
    )
    cost = EcoCost(S=0.0, R=1.0, lambda_g=1.0, lambda_y=np.inf, forms=(None, None))
    problem = assemble_eco_qp(lib, window, cost, bounds, phys, (0.2, 1.0), eq, topology, topology.dt)
    sol = solve_qp(problem, tol_primal=1e-9, tol_dual=1e-9, max_iter=20000)
    assert sol.status == Status.OPTIMAL
    layout = DecisionLayout.of(lib)
    assert np.abs(phys.embed(layout) @ sol.z_star).max() <= 1e-6
    _, u_plan, y_plan, _ = layout.split(sol.z_star)
    assert np.all(u_plan >= 0.2 - 1e-6)

    replay = LinearPlatoon(topology, v_star, y0=x_now)
    rollout = [replay.output()]
    for u in u_plan[:-1]:
        rollout.append(replay.step(u))
    np.testing.assert_allclose(y_plan, np.array(rollout), atol=1e-6)


def test_controller_rejects_too_few_columns(coeffs):
    topology = PlatoonConfig(n=3, cav_indices=(1, 3), hdv_headways=(1.5,))
    ctrl = ControllerConfig(T_ini=5, N=10, adaptation=AdaptationPolicy(max_columns=20))
    rng = np.random.default_rng(1)
    lib = HankelLibrary(
        rng.normal(size=(2 * 15, 40)), rng.normal(size=(6 * 15, 40)), m=2, p=6, T_ini=5, N=10
    )
    with pytest.raises(ConfigError, match="max_columns"):
        PaDeepcController(lib, topology, ctrl, coeffs)
