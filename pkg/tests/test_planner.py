import numpy as np
import pytest

from Libraries.TimeFieldsLib import (FailureReason, MpcConfig, NeuralCostToGo, OracleCostToGo, PrmPlanner, DomainError,
                                     GeometryError, init_model, mpc_plan, gradient_descent_plan, rrt_connect, prm_plan,
                                     fmm_plan, path_metrics, build_speed_field)
from Libraries.TimeFieldsLib.app import planner
from Libraries.TimeFieldsLib.app.planner import path_length, shortcut, save_path_csv, load_path_csv, softmax_weights
from Libraries.TimeFieldsLib.app.timefield import input_grads

QS = np.array([0.3, 0.3])
QG = np.array([0.7, 0.6])
CHORD = 0.5


@pytest.fixture
def cone(tiny_arch):
    return init_model(tiny_arch, rng_seed=0, frozen_tau=1.0)


# region Metrics

def test_path_metrics(two_room_env, walled_env):
    single = path_metrics(two_room_env, [[0.25, 0.5]])
    assert single.length == 0.0
    assert single.collision_free
    straight = path_metrics(two_room_env, [[0.25, 0.5], [0.75, 0.5]])
    assert straight.length == pytest.approx(0.5)
    assert straight.collision_free
    assert 0.0 < straight.min_clearance < 0.25
    blocked = path_metrics(walled_env, [[0.25, 0.5], [0.75, 0.5]])
    assert not blocked.collision_free
    assert blocked.min_clearance == 0.0
    with pytest.raises(DomainError):
        path_metrics(two_room_env, np.zeros((0, 2)))


def test_shortcut_collapses_open_space_path(empty_env):
    zigzag = [np.array([0.2, 0.2]), np.array([0.4, 0.6]), np.array([0.5, 0.3]), np.array([0.8, 0.8])]
    short = shortcut(empty_env, zigzag, passes=10, rng=np.random.default_rng(0))
    assert len(short) == 2
    assert path_length(short) == pytest.approx(np.linalg.norm(zigzag[-1] - zigzag[0]))


def test_path_csv_keeps_points(tmp_path):
    points = np.array([[0.1, 0.2], [0.3 + 1e-13, 0.4]])
    np.testing.assert_array_equal(load_path_csv(save_path_csv(points, tmp_path / "path.csv")), points)

# endregion


# region Cost-to-go adapters

def test_neural_cost_is_scalar_or_batched(cone):
    cost = NeuralCostToGo(cone)
    assert cost(QS, QG) == pytest.approx(CHORD)
    values = cost(np.array([QS, QG]), QG)
    np.testing.assert_allclose(values, [CHORD, 0.0])


def test_oracle_cost_caches_goal_and_marks_unreached(walled_env, unit_speed):
    cost = OracleCostToGo(unit_speed(walled_env))
    goal = np.array([0.25, 0.5])
    assert cost.grid_for(goal) is cost.grid_for(goal.copy())
    assert cost([0.75, 0.5], goal) == 1e6
    assert cost([0.25, 0.25], goal) == pytest.approx(0.25, rel=0.05)

# endregion


# region MPC

def test_mpc_config_checks_step_and_tolerance(empty_env):
    h = empty_env.spacing
    with pytest.raises(DomainError):
        MpcConfig(delta=0.5 * h, goal_tol=3 * h).validate_for(empty_env)
    with pytest.raises(DomainError):
        MpcConfig(delta=2 * h, goal_tol=h).validate_for(empty_env)
    cfg = MpcConfig.for_env(empty_env)
    assert (cfg.delta, cfg.goal_tol) == (2 * h, 3 * h)
    assert cfg.beta == pytest.approx(2 * h)
    assert MpcConfig().beta == 1.0


def test_softmax_weights_use_the_raw_temperature():
    np.testing.assert_allclose(softmax_weights(np.array([2.0, 3.0]), 1.0), np.array([1.0, np.exp(-1.0)]) / (1.0 + np.exp(-1.0)))
    np.testing.assert_allclose(softmax_weights(np.array([5.0, 5.0, 5.0]), 0.1), np.full(3, 1.0 / 3.0))
    spread = softmax_weights(np.array([0.0, 0.06]), 0.06)
    assert spread[1] / spread[0] == pytest.approx(np.exp(-1.0))


def test_mpc_with_oracle_in_open_space(empty_env, unit_speed):
    speed = unit_speed(empty_env)
    result = mpc_plan(OracleCostToGo(speed), empty_env, speed, QS, QG, MpcConfig.for_env(empty_env, rng_seed=0))
    assert result.success
    assert result.failure_reason == FailureReason.NONE
    assert result.length <= 1.2 * CHORD
    assert np.linalg.norm(result.path[-1] - QG) <= 3 * empty_env.spacing
    assert path_metrics(empty_env, result.path).collision_free


def test_mpc_is_deterministic(empty_env, unit_speed, cone):
    speed = unit_speed(empty_env)
    cfg = MpcConfig.for_env(empty_env, rng_seed=4, max_steps=30)
    a = mpc_plan(NeuralCostToGo(cone), empty_env, speed, QS, QG, cfg)
    b = mpc_plan(NeuralCostToGo(cone), empty_env, speed, QS, QG, cfg)
    np.testing.assert_array_equal(a.path, b.path)


def test_mpc_start_at_goal(empty_env, unit_speed, cone):
    speed = unit_speed(empty_env)
    result = mpc_plan(NeuralCostToGo(cone), empty_env, speed, QG + 0.01, QG, MpcConfig.for_env(empty_env))
    assert result.success
    assert result.steps == 0
    assert len(result.path) == 1


def test_mpc_occupied_endpoint_fails_cleanly(two_room_env, unit_speed, cone):
    speed = unit_speed(two_room_env)
    result = mpc_plan(NeuralCostToGo(cone), two_room_env, speed, [0.5, 0.05], QG, MpcConfig.for_env(two_room_env))
    assert not result.success
    assert result.failure_reason == FailureReason.COLLISION


def test_mpc_with_oracle_goes_through_the_door(two_room_env):
    speed = build_speed_field(two_room_env)[1]
    qs, qg = np.array([0.25, 0.2]), np.array([0.75, 0.8])
    result = mpc_plan(OracleCostToGo(speed), two_room_env, speed, qs, qg, MpcConfig.for_env(two_room_env, rng_seed=1))
    assert result.success
    assert path_metrics(two_room_env, result.path).collision_free


def test_mpc_runs_out_of_steps(walled_env, unit_speed, cone):
    speed = unit_speed(walled_env)
    cfg = MpcConfig.for_env(walled_env, max_steps=20)
    result = mpc_plan(NeuralCostToGo(cone), walled_env, speed, [0.25, 0.5], [0.75, 0.5], cfg)
    assert not result.success
    assert result.failure_reason == FailureReason.TIMEOUT
    assert result.steps == 20
    assert path_metrics(walled_env, result.path).collision_free

# endregion


# region Gradient descent

def test_gradient_descent_meets_in_open_space(empty_env, cone):
    speed = build_speed_field(empty_env)[1]
    h = empty_env.spacing
    qs, qg = QS.copy(), QG.copy()
    result = gradient_descent_plan(cone, empty_env, speed, qs, qg, step=h, max_steps=100, goal_tol=3 * h)
    assert result.success
    assert result.length == pytest.approx(CHORD, rel=1e-9)
    np.testing.assert_array_equal(qs, QS)
    np.testing.assert_array_equal(result.path[0], QS)
    np.testing.assert_array_equal(result.path[-1], QG)


def test_gradient_descent_stops_at_a_wall(walled_env, cone):
    speed = build_speed_field(walled_env)[1]
    h = walled_env.spacing
    result = gradient_descent_plan(cone, walled_env, speed, [0.3, 0.5], [0.7, 0.5], step=h, max_steps=2000, goal_tol=3 * h)
    assert not result.success
    assert result.failure_reason == FailureReason.STUCK
    assert result.steps < 2000


def test_gradient_descent_coincident_endpoints(empty_env, cone):
    speed = build_speed_field(empty_env)[1]
    h = empty_env.spacing
    result = gradient_descent_plan(cone, empty_env, speed, QS, QS, step=h, max_steps=10, goal_tol=3 * h)
    assert result.success
    assert result.length == 0.0


def test_gradient_descent_alternates_ends(empty_env, cone, monkeypatch):
    speed = build_speed_field(empty_env)[1]
    h = empty_env.spacing
    seen = []

    def recording(model, qs, qg, create_graph=False):
        seen.append((qs.numpy().copy(), qg.numpy().copy()))
        return input_grads(model, qs, qg, create_graph)

    monkeypatch.setattr(planner, "input_grads", recording)
    gradient_descent_plan(cone, empty_env, speed, QS, QG, step=h, max_steps=1, goal_tol=3 * h)
    assert len(seen) == 2
    np.testing.assert_array_equal(seen[0][0], QS)
    np.testing.assert_array_equal(seen[0][1], QG)
    np.testing.assert_allclose(seen[1][0], QS + h * (QG - QS) / CHORD, rtol=1e-9)
    np.testing.assert_array_equal(seen[1][1], QG)

# endregion


# region Sampling and grid baselines

def test_rrt_connect_in_open_space(empty_env):
    h = empty_env.spacing
    a = rrt_connect(empty_env, QS, QG, max_time_s=5.0, step=2 * h, rng_seed=0)
    b = rrt_connect(empty_env, QS, QG, max_time_s=5.0, step=2 * h, rng_seed=0)
    assert a.success
    assert a.length <= 1.1 * CHORD
    np.testing.assert_array_equal(a.path, b.path)
    np.testing.assert_array_equal(a.path[0], QS)
    np.testing.assert_array_equal(a.path[-1], QG)


def test_rrt_connect_through_door(two_room_env):
    result = rrt_connect(two_room_env, [0.25, 0.2], [0.75, 0.8], max_time_s=10.0, step=2 * two_room_env.spacing, rng_seed=1)
    assert result.success
    assert path_metrics(two_room_env, result.path).collision_free


def test_rrt_connect_times_out_when_disconnected(walled_env):
    result = rrt_connect(walled_env, [0.25, 0.5], [0.75, 0.5], max_time_s=0.3, step=2 * walled_env.spacing, rng_seed=0)
    assert not result.success
    assert result.failure_reason == FailureReason.TIMEOUT


def test_prm_graph_is_reproducible(two_room_env):
    a = PrmPlanner(two_room_env, 100, 10, rng_seed=3)
    b = PrmPlanner(two_room_env, 100, 10, rng_seed=3)
    np.testing.assert_array_equal(a.nodes, b.nodes)
    assert a.edges == b.edges


def test_prm_through_door(two_room_env):
    planner = PrmPlanner(two_room_env, 300, 10, rng_seed=0)
    result = planner.plan([0.25, 0.2], [0.75, 0.8])
    assert result.success
    assert path_metrics(two_room_env, result.path).collision_free
    np.testing.assert_array_equal(result.path[0], [0.25, 0.2])
    np.testing.assert_array_equal(result.path[-1], [0.75, 0.8])


def test_prm_without_nodes(empty_env, walled_env):
    assert prm_plan(empty_env, QS, QG, num_nodes=0, k=10, rng_seed=0).success
    blocked = prm_plan(walled_env, [0.25, 0.5], [0.75, 0.5], num_nodes=0, k=10, rng_seed=0)
    assert not blocked.success
    assert blocked.failure_reason == FailureReason.DISCONNECTED


def test_fmm_plan_in_open_space(empty_env):
    speed = build_speed_field(empty_env)[1]
    result = fmm_plan(empty_env, speed, QS, QG)
    assert result.success
    assert result.length <= 1.05 * CHORD


def test_fmm_plan_through_door_and_occupied_endpoints(two_room_env):
    speed = build_speed_field(two_room_env)[1]
    result = fmm_plan(two_room_env, speed, [0.25, 0.2], [0.75, 0.8])
    assert result.success
    assert path_metrics(two_room_env, result.path).collision_free
    with pytest.raises(GeometryError):
        fmm_plan(two_room_env, speed, [0.25, 0.2], [0.5, 0.05])
    with pytest.raises(GeometryError):
        fmm_plan(two_room_env, speed, [0.5, 0.05], [0.25, 0.2])

# endregion
