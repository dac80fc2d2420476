import math

import numpy as np
import pytest

from bubbledyn.exceptions import ConfigError, ShapeError
from bubbledyn.poses import TaskState, make_wrench, planar_pose
from bubbledyn.tasks import (
    ActionBox,
    DrawingCanvas,
    drawing_action_box,
    pivoting_action_box,
    environment_plane,
    rasterize_ink,
    drawing_score,
    tool_pose_for_tip,
    tool_tip_world,
    drawing_goal_sequence,
    drawing_goal_index,
    pivoting_goal,
    pivoting_score,
    jacobian_policy_drawing,
)


@pytest.fixture(scope="module")
def canvas():
    return DrawingCanvas()


@pytest.fixture
def marker(drawing_tools):
    return drawing_tools[0][2]


class TestActionBox:
    def test_bounds(self):
        box = drawing_action_box()
        np.testing.assert_allclose(box.low, [0.01, 0.0, -0.005, -math.pi / 36])
        np.testing.assert_allclose(box.high, [0.04, 0.02, 0.01, math.pi / 36])
        assert box.contains(box.center)
        assert not box.contains([0.05, 0.0, 0.0, 0.0])

    def test_pivoting_box_limits_descent(self):
        assert pivoting_action_box(0.03).low[2] == -0.03
        assert pivoting_action_box(-0.01).low[2] == 0.0

    def test_sampling_and_clip(self, rng):
        box = pivoting_action_box(0.05)
        assert box.contains(box.sample(rng, 100)).all()
        np.testing.assert_allclose(
            box.clip([1.0, -1.0, 0.0, 0.0]), [0.04, -0.04, 0.0, 0.0]
        )

    def test_inverted_bounds(self):
        with pytest.raises(ConfigError):
            ActionBox((0.0, 0.0, 0.0, 0.0), (1.0, -1.0, 1.0, 1.0))

    def test_roundtrip(self):
        box = drawing_action_box(0.005)
        restored = ActionBox.from_data(box.to_data())
        np.testing.assert_array_equal(restored.high, box.high)


def test_environment_planes():
    _, board = environment_plane("drawing")
    _, table = environment_plane("pivoting")
    np.testing.assert_array_equal(board, [0.0, 0.0, -1.0])
    np.testing.assert_array_equal(table, [0.0, 0.0, 1.0])
    with pytest.raises(ConfigError):
        environment_plane("juggling")


class TestCanvas:
    def test_goal_line_pixels(self, canvas):
        mask = canvas.goal_mask()
        assert mask.shape == (565, 860)
        assert mask[282, 280] and mask[282, 580]
        assert mask[281, 400] and mask[283, 400]
        assert not mask[284, 400]
        assert not mask[282, 582]
        assert not mask[282, 278]

    def test_ink_of_tip_trajectory(self, canvas):
        tips = np.zeros((11, 3))
        tips[:, 1] = np.linspace(0.0, 0.1, 11)
        drawn = rasterize_ink(tips, canvas)
        assert drawn[282, 330]
        score, coverage = drawing_score(drawn, canvas.goal_mask())
        assert score == 1.0
        assert 0.3 < coverage < 0.36

    def test_tips_away_from_board_leave_no_ink(self, canvas):
        tips = np.zeros((5, 3))
        tips[:, 1] = np.linspace(0.0, 0.05, 5)
        tips[:, 2] = -0.01
        assert not rasterize_ink(tips, canvas).any()

    def test_separate_strokes_are_not_joined(self, canvas):
        tips = np.zeros((3, 3))
        tips[:, 1] = [0.0, 0.05, 0.1]
        tips[1, 2] = -0.01
        drawn = rasterize_ink(tips, canvas)
        assert drawn[282, 280] and drawn[282, 380]
        assert not drawn[282, 330]


class TestDrawingScore:
    def test_perfect_and_empty(self, canvas):
        goal = canvas.goal_mask()
        assert drawing_score(goal, goal) == (1.0, 1.0)
        assert drawing_score(canvas.empty_mask(), goal) == (0.0, 0.0)

    def test_off_line_ink_lowers_score(self, canvas):
        goal = canvas.goal_mask()
        measured = goal.copy()
        measured[100:110, 100:110] = True
        score, coverage = drawing_score(measured, goal)
        expected = goal.sum() / (goal.sum() + 100.0)
        assert score == pytest.approx(expected)
        assert coverage == 1.0

    def test_shape_mismatch(self, canvas):
        with pytest.raises(ShapeError):
            drawing_score(np.zeros((3, 3), dtype=bool), canvas.goal_mask())

    def test_matches_pixel_count(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            shape = tuple(rng.integers(1, 30, 2))
            measured = rng.random(shape) < rng.uniform(0.0, 0.5)
            goal = rng.random(shape) < rng.uniform(0.0, 0.5)
            overlap = drawn = wanted = 0
            for row in range(shape[0]):
                for col in range(shape[1]):
                    drawn += int(measured[row, col])
                    wanted += int(goal[row, col])
                    overlap += int(measured[row, col] and goal[row, col])
            score, coverage = drawing_score(measured, goal)
            assert score == (overlap / drawn if drawn else 0.0)
            assert coverage == (overlap / wanted if wanted else 0.0)


def test_tool_pose_places_tip():
    tip_object = np.array([0.0, 0.05])
    pose = tool_pose_for_tip((0.1, 0.0), tip_object, math.pi / 2.0)
    np.testing.assert_allclose(pose, [0.15, 0.0, math.pi / 2.0], atol=1e-15)
    np.testing.assert_allclose(
        tool_tip_world(pose, tip_object), [0.1, 0.0], atol=1e-15
    )


class TestDrawingGoals:
    def test_sequence(self, canvas, marker):
        model = marker.object_model()
        spec = drawing_goal_sequence(canvas, model)
        assert spec.frame == "world"
        assert len(spec.goals) == 31
        first = spec.goals[0]
        np.testing.assert_allclose(first.q.position, [0.0, 0.0, -0.065])
        np.testing.assert_allclose(first.w.force, [0.0, 0.0, -3.0])
        last_tip = tool_tip_world(
            [spec.goals[-1].q.position[1], spec.goals[-1].q.position[2], 0.0],
            model.tip,
        )
        np.testing.assert_allclose(last_tip, [0.3, 0.0], atol=1e-12)

    @pytest.mark.parametrize(
        "tip_y, expected", [(-0.05, 0), (0.095, 11), (0.3, 30)]
    )
    def test_goal_index(self, canvas, marker, tip_y, expected):
        model = marker.object_model()
        spec = drawing_goal_sequence(canvas, model)
        assert drawing_goal_index(spec, model.tip, tip_y) == expected


class TestPivoting:
    def test_goal_in_grasp_frame(self):
        spec = pivoting_goal((0.0, -0.02), math.radians(30.0))
        assert spec.frame == "grasp"
        goal = spec.goals[0]
        np.testing.assert_allclose(
            goal.q.orientation, [math.radians(30.0), 0.0, 0.0]
        )
        np.testing.assert_allclose(goal.w.force, [0.0, 0.0, 3.0])

    @pytest.mark.parametrize(
        "achieved, goal, expected",
        [(10.0, 30.0, 20.0), (350.0, 10.0, 20.0), (0.0, 180.0, 180.0),
         (-170.0, 170.0, 20.0), (45.0, 45.0, 0.0)],
    )
    def test_score(self, achieved, goal, expected):
        assert pivoting_score(achieved, goal) == pytest.approx(expected)


def test_rigid_policy_translates_to_goal(marker):
    model = marker.object_model()
    goal = TaskState(planar_pose(0.005, -0.1, 0.0), make_wrench())
    action = jacobian_policy_drawing(
        np.array([0.0, -0.1, 0.0]), np.zeros(3), 0.025, goal, model.points,
        drawing_action_box(),
    )
    assert action.gw == pytest.approx(0.025)
    assert action.dy == pytest.approx(0.005, abs=1e-12)
    assert action.dz == pytest.approx(0.0, abs=1e-12)
    assert action.dphi == pytest.approx(0.0, abs=1e-12)


def test_rigid_policy_respects_box(marker):
    model = marker.object_model()
    box = drawing_action_box()
    goal = TaskState(planar_pose(0.5, 0.3, 0.4), make_wrench())
    action = jacobian_policy_drawing(
        np.array([0.0, -0.1, 0.0]), np.zeros(3), 0.05, goal, model.points, box
    )
    assert box.contains(list(action))
