"""Pose algebra and shared value types.

Poses are position + axis-angle orientation. Value types are immutable
namedtuples; vectors stored inside them are read-only numpy arrays so a
state can be shared between workers without copies.
"""
import math
import collections

import numpy as np
from scipy.spatial.transform import Rotation

PoseAA = collections.namedtuple("PoseAA", ("position", "orientation"))
Wrench6 = collections.namedtuple("Wrench6", ("force", "torque"))
Action4 = collections.namedtuple("Action4", ("gw", "dy", "dz", "dphi"))

# 'p' is the 2xHxW deformation map pair, 'w' the packed wrench vector
#   (force, torque) and 'r' the packed grasp pose vector (position,
#   axis-angle) in the world frame.
MembraneState = collections.namedtuple("MembraneState", ("p", "w", "r"))
# 'q' object pose (PoseAA), 'w' wrench (Wrench6).
TaskState = collections.namedtuple("TaskState", ("q", "w"))

_PI_TOLERANCE = 1e-12


def _frozen(values, size):
    arr = np.array(values, dtype=np.float64).reshape(size)
    arr.setflags(write=False)
    return arr


def normalize_rotvec(rotvec):
    """Canonical axis-angle with angle in [0, pi].

    Angles above pi are replaced by the complementary rotation about the
    flipped axis. At exactly pi the axis is flipped so its first non-zero
    component is positive.

    Args:
        rotvec (np.ndarray): Axis-angle vector.

    Returns:
        np.ndarray: Normalized axis-angle vector.

    """
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = float(np.linalg.norm(rotvec))
    if angle == 0.0:
        return np.zeros(3)
    axis = rotvec / angle
    angle = math.fmod(angle, 2.0 * math.pi)
    if angle > math.pi:
        angle = 2.0 * math.pi - angle
        axis = -axis
    if abs(angle - math.pi) < _PI_TOLERANCE:
        for component in axis:
            if abs(component) > _PI_TOLERANCE:
                if component < 0.0:
                    axis = -axis
                break
    return axis * angle


def make_pose(position=None, orientation=None):
    """Create valid pose value.

    Args:
        position (Optional[Iterable[float]]): Position in meters.
        orientation (Optional[Iterable[float]]): Axis-angle in radians.

    Returns:
        PoseAA: Pose with normalized orientation.

    """
    if position is None:
        position = np.zeros(3)
    if orientation is None:
        orientation = np.zeros(3)
    position = np.asarray(position, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(position)):
        raise ValueError("Pose position must be finite")
    return PoseAA(
        _frozen(position, 3),
        _frozen(normalize_rotvec(orientation), 3),
    )


def identity_pose():
    return make_pose()


def pose_to_vector(pose):
    return np.concatenate([pose.position, pose.orientation])


def pose_from_vector(vector):
    vector = np.asarray(vector, dtype=np.float64).reshape(6)
    return make_pose(vector[:3], vector[3:])


def make_wrench(force=None, torque=None):
    if force is None:
        force = np.zeros(3)
    if torque is None:
        torque = np.zeros(3)
    return Wrench6(_frozen(force, 3), _frozen(torque, 3))


def wrench_to_vector(wrench):
    return np.concatenate([wrench.force, wrench.torque])


def wrench_from_vector(vector):
    vector = np.asarray(vector, dtype=np.float64).reshape(6)
    return make_wrench(vector[:3], vector[3:])


def action_to_array(action):
    return np.array(
        [action.gw, action.dy, action.dz, action.dphi], dtype=np.float64
    )


def action_from_array(values):
    values = np.asarray(values, dtype=np.float64).reshape(4)
    return Action4(*(float(value) for value in values))


def rotation_matrix(rotvec):
    rotvec = np.array(rotvec, dtype=np.float64)
    return Rotation.from_rotvec(rotvec).as_matrix()


def rotation_matrices(rotvecs):
    """Batched axis-angle to rotation matrices, (N, 3) -> (N, 3, 3)."""
    rotvecs = np.array(rotvecs, dtype=np.float64).reshape(-1, 3)
    return Rotation.from_rotvec(rotvecs).as_matrix()


def matrix_to_rotvec(matrix):
    matrix = np.array(matrix, dtype=np.float64)
    return normalize_rotvec(Rotation.from_matrix(matrix).as_rotvec())


def pose_to_homogeneous(pose):
    """Homogeneous transformation matrix associated to the pose.

    Args:
        pose (PoseAA): Pose.

    Returns:
        np.ndarray: 4x4 matrix in SE(3).

    """
    matrix = np.eye(4)
    matrix[:3, :3] = rotation_matrix(pose.orientation)
    matrix[:3, 3] = pose.position
    return matrix


def homogeneous_to_pose(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    return make_pose(matrix[:3, 3], matrix_to_rotvec(matrix[:3, :3]))


def pose_compose(a, b):
    """Pose of 'b' expressed in the parent frame of 'a'.

    Args:
        a (PoseAA): Outer pose.
        b (PoseAA): Inner pose.

    Returns:
        PoseAA: Composed pose 'a * b'.

    """
    rot_a = rotation_matrix(a.orientation)
    rot_b = rotation_matrix(b.orientation)
    return make_pose(
        rot_a @ b.position + a.position,
        matrix_to_rotvec(rot_a @ rot_b),
    )


def pose_inverse(a):
    rot_a = rotation_matrix(a.orientation)
    return make_pose(-rot_a.T @ a.position, -np.asarray(a.orientation))


def transform_points(pose, points):
    """Apply pose to (N, 3) points."""
    points = np.asarray(points, dtype=np.float64)
    return points @ rotation_matrix(pose.orientation).T + pose.position


def wrap_angle(angle):
    """Wrap angle(s) to [-pi, pi)."""
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


# --- Planar helpers ---
# The grasp plane is the world y-z plane; in-plane rotations are about x.
def planar_pose(y, z, theta):
    return make_pose((0.0, y, z), (theta, 0.0, 0.0))


def planar_components(pose):
    """In-plane (y, z, theta) of a pose whose rotation axis is x.

    Args:
        pose (PoseAA): Pose with out-of-plane components at zero.

    Returns:
        tuple[float, float, float]: Position y, z and signed angle about x.

    """
    matrix = rotation_matrix(pose.orientation)
    theta = math.atan2(matrix[2, 1], matrix[1, 1])
    return float(pose.position[1]), float(pose.position[2]), theta


def planar_from_vector(vector):
    """Batched (y, z, theta) from packed pose vectors (N, 6)."""
    vector = np.asarray(vector, dtype=np.float64).reshape(-1, 6)
    matrices = rotation_matrices(vector[:, 3:])
    theta = np.arctan2(matrices[:, 2, 1], matrices[:, 1, 1])
    return np.stack([vector[:, 1], vector[:, 2], theta], axis=1)


def planar_to_vector(planar):
    """Batched packed pose vectors (N, 6) from (y, z, theta) rows."""
    planar = np.asarray(planar, dtype=np.float64).reshape(-1, 3)
    output = np.zeros((len(planar), 6))
    output[:, 1] = planar[:, 0]
    output[:, 2] = planar[:, 1]
    output[:, 3] = wrap_angle(planar[:, 2])
    return output


def rotation_2d(theta):
    cos_t = math.cos(theta)
    sin_t = math.sin(theta)
    return np.array([[cos_t, -sin_t], [sin_t, cos_t]])


def planar_compose(a, b):
    """Compose two (y, z, theta) transforms."""
    rot_a = rotation_2d(a[2])
    position = rot_a @ np.asarray(b[:2]) + np.asarray(a[:2])
    return np.array(
        [position[0], position[1], float(wrap_angle(a[2] + b[2]))]
    )


def planar_inverse(a):
    rot_a = rotation_2d(a[2])
    position = -rot_a.T @ np.asarray(a[:2])
    return np.array([position[0], position[1], float(wrap_angle(-a[2]))])


# --- Robot action model ---
def robot_action_model(r, a):
    """Grasp pose after a gripper action.

    The grasp frame moves rigidly by (dy, dz) in the grasp plane and turns
    by 'dphi' about the plane normal. Width is not part of the pose.

    Args:
        r (PoseAA): Grasp pose in the world frame.
        a (Action4): Gripper action.

    Returns:
        PoseAA: Advanced grasp pose.

    """
    y, z, phi = planar_components(r)
    return make_pose(
        (r.position[0], y + a.dy, z + a.dz),
        (float(wrap_angle(phi + a.dphi)), 0.0, 0.0),
    )


def robot_action_vectors(r, actions):
    """Batched 'robot_action_model' on packed pose vectors.

    Args:
        r (np.ndarray): (N, 6) grasp pose vectors.
        actions (np.ndarray): (N, 4) actions (gw, dy, dz, dphi).

    Returns:
        np.ndarray: (N, 6) advanced pose vectors.

    """
    r = np.asarray(r, dtype=np.float64).reshape(-1, 6)
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, 4)
    planar = planar_from_vector(r)
    planar[:, 0] += actions[:, 1]
    planar[:, 1] += actions[:, 2]
    planar[:, 2] += actions[:, 3]
    output = planar_to_vector(planar)
    output[:, 0] = r[:, 0]
    return output


def compose_planar_vectors(r, q):
    """Batched 'r * q' of packed planar pose vectors (N, 6).

    The x position of 'q' is kept.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1, 6)
    outer = planar_from_vector(r)
    inner = planar_from_vector(q)
    cos_o = np.cos(outer[:, 2])
    sin_o = np.sin(outer[:, 2])
    output = np.empty_like(inner)
    output[:, 0] = outer[:, 0] + cos_o * inner[:, 0] - sin_o * inner[:, 1]
    output[:, 1] = outer[:, 1] + sin_o * inner[:, 0] + cos_o * inner[:, 1]
    output[:, 2] = outer[:, 2] + inner[:, 2]
    vectors = planar_to_vector(output)
    vectors[:, 0] = q[:, 0]
    return vectors


def relative_planar_vectors(r, q):
    """Batched 'inverse(r) * q' of packed planar pose vectors (N, 6)."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 6)
    outer = planar_from_vector(r)
    inner = planar_from_vector(q)
    cos_o = np.cos(outer[:, 2])
    sin_o = np.sin(outer[:, 2])
    dy = inner[:, 0] - outer[:, 0]
    dz = inner[:, 1] - outer[:, 1]
    output = np.empty_like(inner)
    output[:, 0] = cos_o * dy + sin_o * dz
    output[:, 1] = -sin_o * dy + cos_o * dz
    output[:, 2] = inner[:, 2] - outer[:, 2]
    vectors = planar_to_vector(output)
    vectors[:, 0] = q[:, 0]
    return vectors
