import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bubbledyn.baselines import FixedModel, JacobianModel
from bubbledyn.controller import (
    MppiConfig,
    CostConfig,
    MppiOptimizer,
    MppiController,
    object_pose_costs,
    task_cost,
    world_to_grasp_wrench,
    goal_costs,
    sample_sequences,
    mppi_weights,
    mppi_update,
    rollout,
    write_trace,
)
from bubbledyn.constants import MPPI_LAMBDA
from bubbledyn.exceptions import ConfigError, ControllerError, ObservationError
from bubbledyn.poses import (
    MembraneState,
    TaskState,
    make_pose,
    make_wrench,
    planar_pose,
    planar_to_vector,
    pose_compose,
    pose_to_vector,
)
from bubbledyn.tasks import (
    ActionBox,
    drawing_action_box,
    pivoting_action_box,
    pivoting_goal,
)

POINTS = np.array([
    [0.0, 0.0, 0.05], [0.0, 0.0, -0.05], [0.0, 0.01, 0.0], [0.0, -0.01, 0.0],
])


class TestWeights:
    def test_normalized_and_ordered(self):
        weights = mppi_weights([3.0, 1.0, 2.0], 1.0)
        assert weights.sum() == pytest.approx(1.0)
        assert np.argmax(weights) == 1
        assert weights[0] < weights[2] < weights[1]

    def test_equal_costs_are_uniform(self):
        np.testing.assert_allclose(mppi_weights([5.0] * 4, 0.1), 0.25)

    def test_infinite_costs_get_no_weight(self):
        weights = mppi_weights([np.inf, 1.0, 1.0], 0.01)
        np.testing.assert_allclose(weights, [0.0, 0.5, 0.5])

    def test_no_feasible_sample(self):
        with pytest.raises(ControllerError):
            mppi_weights([np.inf, np.inf], 0.01)

    def test_large_cost_gap_selects_best(self):
        nominal = np.zeros((2, 4))
        samples = np.stack([np.full((2, 4), 1.0), np.full((2, 4), -1.0)])
        updated = mppi_update(nominal, samples, [0.0, 10.0], 0.01)
        np.testing.assert_allclose(updated, 1.0)


def test_samples_stay_in_box(rng):
    box = drawing_action_box()
    nominal = np.repeat(box.high[None], 3, axis=0)
    samples = sample_sequences(
        nominal, MppiConfig(samples=50, horizon=3), box, rng
    )
    assert samples.shape == (50, 3, 4)
    assert box.contains(samples).all()
    still = sample_sequences(
        nominal, MppiConfig(noise_fraction=0.0, samples=2), box, rng
    )
    np.testing.assert_array_equal(still[0], nominal)


def test_optimizer_moves_toward_cost_minimum(rng):
    box = drawing_action_box()
    optimizer = MppiOptimizer(
        MppiConfig(lambda_=1e-7, horizon=1, samples=500), rng
    )

    def evaluate(samples):
        return np.sum((samples[:, :, 1] - 0.005) ** 2, axis=1)

    for _ in range(20):
        action, costs = optimizer.step(box, evaluate)
    assert costs.shape == (500, )
    assert box.contains(action)
    assert action[1] == pytest.approx(0.005, abs=0.001)


class TestCosts:
    def test_object_pose_costs(self):
        goal = planar_to_vector([0.0, 0.0, 0.0])[0]
        q = planar_to_vector([[0.0, 0.0, 0.0], [0.003, -0.004, 0.0]])
        np.testing.assert_allclose(
            object_pose_costs(q, goal, POINTS), [0.0, 0.005 ** 2]
        )

    def test_rotation_cost_grows_with_angle(self):
        goal = planar_to_vector([0.0, 0.0, 0.0])[0]
        q = planar_to_vector([[0.0, 0.0, 0.1], [0.0, 0.0, 0.2]])
        costs = object_pose_costs(q, goal, POINTS)
        assert 0.0 < costs[0] < costs[1]

    def test_task_cost_adds_weighted_wrench(self):
        state = TaskState(make_pose(), make_wrench((0.0, 0.0, 2.0)))
        goal = TaskState(make_pose(), make_wrench())
        assert task_cost(state, goal, POINTS, 0.5) == pytest.approx(
            0.5 * 4.0 / 6.0
        )

    def test_world_wrench_in_grasp_frame(self):
        r = np.array([[0.0, 0.0, 0.0, np.pi / 2.0, 0.0, 0.0]])
        w = world_to_grasp_wrench([0.0, 0.0, 3.0, 0.0, 0.0, 0.0], r)
        np.testing.assert_allclose(
            w, [[0.0, 3.0, 0.0, 0.0, 0.0, 0.0]], atol=1e-12
        )

    def test_goal_frames(self):
        r = planar_to_vector([0.1, 0.2, 0.0])
        q = planar_to_vector([0.0, -0.05, 0.0])
        world_goal = TaskState(planar_pose(0.1, 0.15, 0.0), make_wrench())
        grasp_goal = TaskState(planar_pose(0.0, -0.05, 0.0), make_wrench())
        for goal, frame in ((world_goal, "world"), (grasp_goal, "grasp")):
            cost = goal_costs(
                q, np.zeros((1, 6)), r, goal, frame, POINTS, 1.0
            )
            np.testing.assert_allclose(cost, 0.0, atol=1e-20)


def test_rollout_marks_failed_observations():
    model = FixedModel()
    membrane = MembraneState(
        np.zeros((2, 25, 20)), np.zeros(6), planar_to_vector([0, 0.1, 0])[0]
    )
    sequences = np.zeros((3, 2, 4))
    sequences[:, :, 1] = [[0.0, 0.0], [0.01, 0.0], [0.0, 0.01]]

    def observe(maps, w, r):
        if r[1] > 0.005:
            raise ObservationError("lost imprint")
        return np.zeros(6)

    predicted = rollout(
        model, observe, model.initial(membrane), None, sequences
    )
    assert predicted["q"].shape == (3, 2, 6)
    np.testing.assert_array_equal(
        predicted["valid"], [[True, True], [False, False], [True, False]]
    )
    np.testing.assert_allclose(predicted["r"][1, :, 1], [0.01, 0.01])


def test_controller_step_with_rigid_model(rng, tmp_path, plate_tool):
    membrane = MembraneState(
        np.zeros((2, 25, 20)), np.zeros(6), planar_to_vector([0, 0.1, 0])[0]
    )
    controller = MppiController(
        JacobianModel(),
        None,
        plate_tool.object_model(),
        MppiConfig(samples=20),
        CostConfig(),
        rng,
    )
    box = pivoting_action_box(0.1)
    controller.reset(box)
    goal = pivoting_goal((0.0, 0.0), 0.5)
    q = planar_to_vector([0.0, 0.0, 0.0])[0]
    action = controller.control_step(membrane, q, goal.goals[0], "grasp", box)
    assert box.contains(list(action))
    assert controller.nominal.shape == (2, 4)
    trace = controller.trace
    assert trace[0]["feasible"] == 20
    path = str(tmp_path / "trace.csv")
    controller.write_trace(path)
    with open(path, newline="") as stream:
        reader = csv.DictReader(stream)
        rows = list(reader)
    assert len(rows) == 1
    assert float(rows[0]["dphi"]) == pytest.approx(action.dphi)

    phases = [
        "time_sampling",
        "time_rollout",
        "time_observation",
        "time_cost",
        "time_update",
    ]
    columns = [name for name in reader.fieldnames if name.startswith("time_")]
    assert columns == phases + ["time_total"]
    seconds = [float(rows[0][name]) for name in phases]
    assert min(seconds) >= 0.0
    assert sum(seconds) <= float(rows[0]["time_total"]) + 1e-9
    # rigid model tracks the object pose without observing it
    assert float(rows[0]["time_observation"]) == 0.0


def test_empty_trace_writes_nothing(tmp_path):
    path = tmp_path / "trace.csv"
    write_trace(str(path), [])
    assert not path.exists()


class TestConfigs:
    def test_mppi_roundtrip(self):
        cfg = MppiConfig(lambda_=0.5, horizon=3, samples=10)
        data = cfg.to_data()
        assert data["lambda"] == 0.5
        assert MppiConfig.from_data(data).to_data() == data

    @pytest.mark.parametrize(
        "kwargs",
        [{"lambda_": 0.0}, {"horizon": 0}, {"samples": 0},
         {"noise_fraction": -1.0}],
    )
    def test_invalid_mppi(self, kwargs):
        with pytest.raises(ConfigError):
            MppiConfig(**kwargs)

    def test_cost_config(self):
        assert CostConfig.from_data({}).wrench_weight == 0.0001
        with pytest.raises(ConfigError):
            CostConfig(-1.0)


seeds = st.integers(0, 2 ** 32 - 1)
coordinates = st.floats(-0.2, 0.2, allow_nan=False)
angles = st.floats(-math.pi, math.pi, allow_nan=False)
poses = st.builds(
    lambda position, rotvec: make_pose(position, rotvec),
    st.tuples(coordinates, coordinates, coordinates),
    st.tuples(angles, angles, angles),
)


def random_update_inputs(seed, count=8):
    rng = np.random.default_rng(seed)
    nominal = rng.normal(size=(2, 4))
    samples = nominal[None] + rng.normal(size=(count, 2, 4))
    costs = rng.uniform(0.0, 0.05, count)
    return nominal, samples, costs


class TestUpdateProperties:
    @given(seeds, st.floats(0.0, 100.0))
    def test_single_sample_collapses(self, seed, cost):
        nominal, samples, _ = random_update_inputs(seed, 1)
        updated = mppi_update(nominal, samples, [cost], MPPI_LAMBDA)
        np.testing.assert_allclose(updated, samples[0], atol=1e-12)

    @given(seeds, st.floats(-100.0, 100.0))
    def test_cost_offset_invariance(self, seed, offset):
        nominal, samples, costs = random_update_inputs(seed)
        np.testing.assert_allclose(
            mppi_update(nominal, samples, costs + offset, MPPI_LAMBDA),
            mppi_update(nominal, samples, costs, MPPI_LAMBDA),
            atol=1e-9,
        )

    @given(seeds)
    def test_large_lambda_gives_sample_mean(self, seed):
        nominal, samples, costs = random_update_inputs(seed)
        np.testing.assert_allclose(
            mppi_update(nominal, samples, costs * 200.0, 1e6),
            samples.mean(axis=0),
            atol=1e-4,
        )

    @given(st.lists(st.floats(0.0, 1e3), min_size=1, max_size=50))
    def test_weights_are_a_distribution(self, costs):
        weights = mppi_weights(costs, MPPI_LAMBDA)
        assert np.all(weights >= 0.0)
        assert weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_equal_costs_average_two_samples(self):
        nominal = np.zeros((2, 4))
        samples = np.stack([np.full((2, 4), 0.3), np.full((2, 4), -0.1)])
        updated = mppi_update(nominal, samples, [2.0, 2.0], MPPI_LAMBDA)
        np.testing.assert_allclose(updated, 0.1)


def test_sample_spread_matches_noise_fraction():
    rng = np.random.default_rng(11)
    box = pivoting_action_box(0.1)
    cfg = MppiConfig(samples=20000, horizon=1, noise_fraction=0.1)
    samples = sample_sequences(box.center[None], cfg, box, rng)
    np.testing.assert_allclose(
        samples[:, 0].std(axis=0), 0.1 * box.half_range, rtol=0.03
    )
    np.testing.assert_allclose(
        samples[:, 0].mean(axis=0), box.center, atol=0.01 * box.half_range
    )


@given(poses, poses, poses)
@settings(max_examples=50)
def test_object_pose_cost_is_left_invariant(q, q_goal, common):
    cost = object_pose_costs(
        pose_to_vector(q)[None], pose_to_vector(q_goal), POINTS
    )
    moved = object_pose_costs(
        pose_to_vector(pose_compose(common, q))[None],
        pose_to_vector(pose_compose(common, q_goal)),
        POINTS,
    )
    np.testing.assert_allclose(moved, cost, rtol=1e-9, atol=1e-15)


def test_spring_toy_reaches_analytic_optimum():
    # Tool on a linear spring: force k x should match f, effort costs
    # beta x^2, so the best position is k f / (k^2 + beta).
    stiffness = 1000.0
    target_force = 10.0
    effort = stiffness ** 2

    def spring_cost(x):
        return (stiffness * x - target_force) ** 2 + effort * x ** 2

    best = stiffness * target_force / (stiffness ** 2 + effort)
    optimum = spring_cost(best)
    assert optimum == pytest.approx(50.0)

    box = ActionBox((0.0, -0.001, 0.0, 0.0), (0.0, 0.001, 0.0, 0.0))
    optimizer = MppiOptimizer(MppiConfig(), np.random.default_rng(5))
    x = 0.0
    for _ in range(50):

        def evaluate(samples, start=x):
            positions = start + np.cumsum(samples[:, :, 1], axis=1)
            return spring_cost(positions).sum(axis=1)

        action, _ = optimizer.step(box, evaluate)
        x += action[1]
    assert spring_cost(x) <= 1.05 * optimum
    assert x == pytest.approx(best, abs=2e-4)
