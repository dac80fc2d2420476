import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bubbledyn.poses import (
    Action4,
    make_pose,
    identity_pose,
    normalize_rotvec,
    pose_to_homogeneous,
    pose_compose,
    pose_inverse,
    transform_points,
    pose_to_vector,
    wrap_angle,
    planar_pose,
    planar_components,
    planar_from_vector,
    planar_to_vector,
    planar_compose,
    planar_inverse,
    robot_action_model,
    robot_action_vectors,
    compose_planar_vectors,
    relative_planar_vectors,
)

coordinates = st.floats(-2.0, 2.0, allow_nan=False)
angles = st.floats(-3.0 * math.pi, 3.0 * math.pi, allow_nan=False)
poses = st.builds(
    lambda position, rotvec: make_pose(position, rotvec),
    st.tuples(coordinates, coordinates, coordinates),
    st.tuples(angles, angles, angles),
)


def assert_pose_close(a, b, tolerance=1e-9):
    np.testing.assert_allclose(
        pose_to_homogeneous(a), pose_to_homogeneous(b), atol=tolerance
    )


def test_zero_pose_is_identity_matrix():
    np.testing.assert_allclose(pose_to_homogeneous(identity_pose()), np.eye(4))


def test_pure_translation():
    matrix = pose_to_homogeneous(make_pose((1.0, 2.0, 3.0)))
    np.testing.assert_allclose(matrix[:3, :3], np.eye(3))
    np.testing.assert_allclose(matrix[:3, 3], (1.0, 2.0, 3.0))
    np.testing.assert_allclose(matrix[3], (0.0, 0.0, 0.0, 1.0))


def test_quarter_turn_about_z():
    pose = make_pose(orientation=(0.0, 0.0, math.pi / 2.0))
    point = transform_points(pose, [[1.0, 0.0, 0.0]])[0]
    np.testing.assert_allclose(point, (0.0, 1.0, 0.0), atol=1e-12)


def test_compose_two_eighth_turns():
    eighth = make_pose(orientation=(0.0, 0.0, math.pi / 4.0))
    composed = pose_compose(eighth, eighth)
    np.testing.assert_allclose(
        composed.orientation, (0.0, 0.0, math.pi / 2.0), atol=1e-12
    )


def test_position_must_be_finite():
    with pytest.raises(ValueError):
        make_pose((0.0, float("nan"), 0.0))


def test_pose_values_are_read_only():
    pose = make_pose((1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        pose.position[0] = 5.0


def test_read_only_poses_compose():
    a = make_pose((1.0, 2.0, 3.0), (0.0, 0.0, math.pi / 2.0))
    b = make_pose((0.5, 0.0, 0.0), (math.pi / 2.0, 0.0, 0.0))
    assert not a.orientation.flags.writeable

    matrix_a = pose_to_homogeneous(a)
    expected = np.array([
        [0.0, -1.0, 0.0, 1.0],
        [1.0, 0.0, 0.0, 2.0],
        [0.0, 0.0, 1.0, 3.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
    np.testing.assert_allclose(matrix_a, expected, atol=1e-12)
    np.testing.assert_allclose(
        pose_to_homogeneous(pose_compose(a, b)),
        matrix_a @ pose_to_homogeneous(b),
        atol=1e-12,
    )
    assert_pose_close(pose_compose(a, pose_inverse(a)), identity_pose())


@pytest.mark.parametrize(
    "rotvec, expected",
    [
        ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        ((0.0, 0.0, 1.5 * math.pi), (0.0, 0.0, -0.5 * math.pi)),
        ((0.0, 0.0, 2.0 * math.pi), (0.0, 0.0, 0.0)),
        ((-math.pi, 0.0, 0.0), (math.pi, 0.0, 0.0)),
        ((0.0, -math.pi, 0.0), (0.0, math.pi, 0.0)),
    ],
)
def test_normalize_rotvec(rotvec, expected):
    np.testing.assert_allclose(normalize_rotvec(rotvec), expected, atol=1e-12)


@given(poses)
def test_rotation_is_orthonormal(pose):
    matrix = pose_to_homogeneous(pose)
    rotation = matrix[:3, :3]
    assert np.max(np.abs(rotation.T @ rotation - np.eye(3))) <= 1e-9
    assert np.linalg.det(rotation) == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.norm(pose.orientation) <= math.pi + 1e-12


@given(poses)
def test_compose_with_inverse_is_identity(pose):
    assert_pose_close(pose_compose(pose, pose_inverse(pose)), identity_pose())
    assert_pose_close(pose_compose(identity_pose(), pose), pose)


@settings(max_examples=50)
@given(poses, poses, poses)
def test_compose_is_associative(a, b, c):
    assert_pose_close(
        pose_compose(pose_compose(a, b), c),
        pose_compose(a, pose_compose(b, c)),
    )


@given(angles)
def test_wrap_angle_range(angle):
    wrapped = float(wrap_angle(angle))
    assert -math.pi <= wrapped < math.pi
    assert math.cos(wrapped) == pytest.approx(math.cos(angle), abs=1e-9)
    assert math.sin(wrapped) == pytest.approx(math.sin(angle), abs=1e-9)


def test_planar_components_roundtrip():
    y, z, theta = planar_components(planar_pose(0.1, -0.2, -0.7))
    assert (y, z) == pytest.approx((0.1, -0.2))
    assert theta == pytest.approx(-0.7)


def test_planar_vector_roundtrip():
    planar = np.array([[0.01, 0.02, 0.3], [-0.05, 0.0, -2.5]])
    vectors = planar_to_vector(planar)
    assert vectors.shape == (2, 6)
    np.testing.assert_allclose(planar_from_vector(vectors), planar)


def test_planar_compose_matches_pose_compose():
    a = (0.02, -0.01, 0.4)
    b = (0.03, 0.05, -1.1)
    expected = planar_components(
        pose_compose(planar_pose(*a), planar_pose(*b))
    )
    np.testing.assert_allclose(planar_compose(a, b), expected, atol=1e-12)
    np.testing.assert_allclose(
        planar_compose(a, planar_inverse(a)), (0.0, 0.0, 0.0), atol=1e-12
    )


def test_robot_action_moves_grasp_rigidly():
    grasp = planar_pose(0.0, 0.1, 0.2)
    moved = robot_action_model(grasp, Action4(0.02, 0.01, -0.005, 0.1))
    y, z, theta = planar_components(moved)
    assert (y, z, theta) == pytest.approx((0.01, 0.095, 0.3))


def test_robot_action_vectors_match_single_model():
    grasps = [planar_pose(0.0, 0.1, 0.2), planar_pose(0.03, -0.02, -1.0)]
    actions = np.array([
        [0.02, 0.01, -0.005, 0.1],
        [0.03, -0.02, 0.0, -0.05],
    ])
    batched = robot_action_vectors(
        [pose_to_vector(grasp) for grasp in grasps], actions
    )
    for grasp, action, row in zip(grasps, actions, batched):
        single = robot_action_model(grasp, Action4(*action))
        np.testing.assert_allclose(row, pose_to_vector(single), atol=1e-12)


def test_relative_vectors_invert_composition():
    r = planar_to_vector([[0.01, 0.2, 0.5], [-0.1, 0.0, -2.0]])
    q = planar_to_vector([[0.003, -0.01, 0.2], [0.0, 0.02, 1.0]])
    world = compose_planar_vectors(r, q)
    np.testing.assert_allclose(
        planar_from_vector(relative_planar_vectors(r, world)),
        planar_from_vector(q),
        atol=1e-12,
    )
