"""Drawing and pivoting task definitions.

World frame: the grasp plane is y-z. The drawing board is the plane z = 0
seen from below (normal -z); its canvas spans world x (rows) and y
(columns). Pivoting happens on a table z = 0 seen from above (normal +z).
"""
import math
import collections

import numpy as np

from .constants import (
    TASK_DRAWING,
    TASK_PIVOTING,
    CANVAS_SHAPE,
    CANVAS_RESOLUTION,
    PEN_RADIUS,
    INK_CONTACT_DISTANCE,
    DRAWING_LINE_LENGTH,
    DRAWING_GOAL_SPACING,
    IMPEDANCE_LIMIT,
    GOAL_WRENCH_MAGNITUDE,
)
from .controller import object_pose_costs
from .exceptions import ConfigError, ShapeError
from .poses import (
    TaskState,
    make_wrench,
    planar_pose,
    planar_components,
    planar_from_vector,
    planar_to_vector,
    pose_to_vector,
    action_from_array,
    rotation_2d,
    wrap_angle,
)

ACTION_NAMES = ("gw", "dy", "dz", "dphi")
DRAWING_BOARD_POINT = (0.0, 0.0, 0.0)
DRAWING_BOARD_NORMAL = (0.0, 0.0, -1.0)
PIVOTING_TABLE_POINT = (0.0, 0.0, 0.0)
PIVOTING_TABLE_NORMAL = (0.0, 0.0, 1.0)
# Canvas pixel of world (x, y) = (0, 0), the line start
CANVAS_ORIGIN = (282, 280)
# Angle candidates scanned by the rigid-attachment drawing policy
_POLICY_ANGLE_STEPS = 41

GoalSpec = collections.namedtuple("GoalSpec", ("goals", "frame"))


class ActionBox(object):
    """Per-dimension bounds of (gw, dy, dz, dphi).

    Args:
        low (Iterable[float]): Lower bounds.
        high (Iterable[float]): Upper bounds.

    """

    def __init__(self, low, high):
        low = np.asarray(low, dtype=np.float64).reshape(4)
        high = np.asarray(high, dtype=np.float64).reshape(4)
        bad = [
            name for name, lo, hi in zip(ACTION_NAMES, low, high) if lo > hi
        ]
        if bad:
            raise ConfigError(
                "Action box bounds inverted for {}".format(", ".join(bad))
            )
        self._low = low
        self._high = high

    def __repr__(self):
        return "<ActionBox low={} high={}>".format(
            self._low.tolist(), self._high.tolist()
        )

    @property
    def low(self):
        return self._low.copy()

    @property
    def high(self):
        return self._high.copy()

    @property
    def center(self):
        return 0.5 * (self._low + self._high)

    @property
    def half_range(self):
        return 0.5 * (self._high - self._low)

    def clip(self, actions):
        return np.clip(actions, self._low, self._high)

    def contains(self, actions, tolerance=1e-12):
        actions = np.asarray(actions)
        return np.all(
            (actions >= self._low - tolerance)
            & (actions <= self._high + tolerance),
            axis=-1,
        )

    def sample(self, rng, count=None):
        shape = (4, ) if count is None else (count, 4)
        return rng.uniform(self._low, self._high, shape)

    def to_data(self):
        return {"low": self._low.tolist(), "high": self._high.tolist()}

    @classmethod
    def from_data(cls, data):
        return cls(data["low"], data["high"])


def drawing_action_box(impedance=IMPEDANCE_LIMIT):
    """Drawing box; 'impedance' bounds the pressing motion toward the board."""
    return ActionBox(
        (0.010, 0.0, -0.005, -math.pi / 36.0),
        (0.040, 0.020, impedance, math.pi / 36.0),
    )


def pivoting_action_box(d_env):
    """Pivoting box; 'd_env' is the grasp height above the table."""
    d_env = max(float(d_env), 0.0)
    return ActionBox(
        (0.005, -0.040, -d_env, -math.pi / 6.0),
        (0.040, 0.040, 0.020, math.pi / 6.0),
    )


def environment_plane(task):
    """World point and unit normal of the task environment plane."""
    if task == TASK_DRAWING:
        return np.array(DRAWING_BOARD_POINT), np.array(DRAWING_BOARD_NORMAL)
    if task == TASK_PIVOTING:
        return np.array(PIVOTING_TABLE_POINT), np.array(PIVOTING_TABLE_NORMAL)
    raise ConfigError("Unknown task \"{}\"".format(task))


def goal_wrench(normal, magnitude=GOAL_WRENCH_MAGNITUDE):
    """World frame goal wrench pushing along the environment normal."""
    return make_wrench(magnitude * np.asarray(normal, dtype=np.float64))


# --- Drawing ---
class DrawingCanvas(object):
    """Binary canvas of the drawing board.

    Pixel (row, col) covers world x = (row - 282) mm and y = (col - 280)
    mm. The goal line starts at the world origin and runs along +y.

    Args:
        line_length (float): Length of the goal line in meters.
        pen_radius (float): Ink radius in meters.
        shape (tuple[int, int]): Canvas size in pixels.
        resolution (float): Pixel size in meters.

    """

    def __init__(
        self,
        line_length=DRAWING_LINE_LENGTH,
        pen_radius=PEN_RADIUS,
        shape=CANVAS_SHAPE,
        resolution=CANVAS_RESOLUTION,
    ):
        self.line_length = float(line_length)
        self.pen_radius = float(pen_radius)
        self.shape = tuple(shape)
        self.resolution = float(resolution)
        self._goal_mask = None

    @property
    def line_start(self):
        return np.array([0.0, 0.0])

    @property
    def line_end(self):
        return np.array([0.0, self.line_length])

    def pixel_centers(self):
        """World (x, y) of every pixel center, (rows, cols, 2)."""
        rows = (np.arange(self.shape[0]) - CANVAS_ORIGIN[0]) * self.resolution
        cols = (np.arange(self.shape[1]) - CANVAS_ORIGIN[1]) * self.resolution
        xs, ys = np.meshgrid(rows, cols, indexing="ij")
        return np.stack([xs, ys], axis=-1)

    def empty_mask(self):
        return np.zeros(self.shape, dtype=bool)

    def stroke_mask(self, start, end):
        """Pixels within the pen radius of the segment start-end (x, y)."""
        centers = self.pixel_centers()
        start = np.asarray(start, dtype=np.float64)
        end = np.asarray(end, dtype=np.float64)
        edge = end - start
        length_sq = float(edge @ edge)
        rel = centers - start
        if length_sq == 0.0:
            ratio = np.zeros(self.shape)
        else:
            ratio = np.clip((rel @ edge) / length_sq, 0.0, 1.0)
        closest = start + ratio[..., None] * edge
        distance = np.linalg.norm(centers - closest, axis=-1)
        return distance <= self.pen_radius + 1e-12

    def goal_mask(self):
        if self._goal_mask is None:
            self._goal_mask = self.stroke_mask(self.line_start, self.line_end)
        return self._goal_mask.copy()


def board_distance(tips):
    """Distance of world tip points (N, 3) from the board, positive below."""
    point, normal = environment_plane(TASK_DRAWING)
    tips = np.asarray(tips, dtype=np.float64).reshape(-1, 3)
    return (tips - point) @ normal


def rasterize_ink(tips, canvas, contact_distance=INK_CONTACT_DISTANCE):
    """Ink mask of a tip trajectory.

    Samples closer to the board than 'contact_distance' leave ink;
    consecutive inking samples are joined by a continuous stroke.

    Args:
        tips (np.ndarray): (K, 3) world tip positions in time order.
        canvas (DrawingCanvas): Target canvas.
        contact_distance (float): Inking distance from the board.

    Returns:
        np.ndarray: Boolean mask of canvas shape.

    """
    tips = np.asarray(tips, dtype=np.float64).reshape(-1, 3)
    mask = canvas.empty_mask()
    contact = board_distance(tips) <= contact_distance
    previous = None
    for tip, touching in zip(tips, contact):
        if not touching:
            previous = None
            continue
        start = tip[:2] if previous is None else previous
        mask |= canvas.stroke_mask(start, tip[:2])
        previous = tip[:2]
    return mask


def drawing_score(measured, goal):
    """Share of the drawn pixels lying on the goal line.

    Returns:
        tuple[float, float]: Score |D_meas & D_goal| / |D_meas| (0 when
            nothing was drawn) and coverage |D_meas & D_goal| / |D_goal|.

    Raises:
        ShapeError: Masks differ in shape.

    """
    measured = np.asarray(measured, dtype=bool)
    goal = np.asarray(goal, dtype=bool)
    if measured.shape != goal.shape:
        raise ShapeError(goal.shape, measured.shape)
    overlap = int(np.count_nonzero(measured & goal))
    drawn = int(np.count_nonzero(measured))
    wanted = int(np.count_nonzero(goal))
    score = overlap / drawn if drawn else 0.0
    coverage = overlap / wanted if wanted else 0.0
    return score, coverage


def tool_pose_for_tip(tip_world, tip_object, theta):
    """World planar pose placing object point 'tip_object' at 'tip_world'."""
    offset = rotation_2d(theta) @ np.asarray(tip_object, dtype=np.float64)
    position = np.asarray(tip_world, dtype=np.float64) - offset
    return np.array([position[0], position[1], theta])


def drawing_goal_sequence(
    canvas, object_model, spacing=DRAWING_GOAL_SPACING,
    magnitude=GOAL_WRENCH_MAGNITUDE,
):
    """Tool poses along the line, tool axis along the board normal.

    Args:
        canvas (DrawingCanvas): Canvas with the goal line.
        object_model (ObjectModel): Held marker, tip in the object frame.
        spacing (float): Nominal distance between goals.
        magnitude (float): Goal pressing force.

    Returns:
        GoalSpec: World frame goals.

    """
    count = max(int(round(canvas.line_length / spacing)) + 1, 2)
    ys = np.linspace(0.0, canvas.line_length, count)
    tip = np.asarray(object_model.tip, dtype=np.float64)[1:]
    wrench = goal_wrench(DRAWING_BOARD_NORMAL, magnitude)
    goals = []
    for y in ys:
        planar = tool_pose_for_tip((y, DRAWING_BOARD_POINT[2]), tip, 0.0)
        goals.append(TaskState(planar_pose(*planar), wrench))
    return GoalSpec(tuple(goals), "world")


def tool_tip_world(planar, tip_object):
    """World (y, z) of the object point 'tip_object' for a planar pose."""
    planar = np.asarray(planar, dtype=np.float64)
    tip = np.asarray(tip_object, dtype=np.float64)[-2:]
    return rotation_2d(planar[2]) @ tip + planar[:2]


def drawing_goal_index(
    goal_spec, tip_object, tip_y, lead=DRAWING_GOAL_SPACING
):
    """Index of the first goal at least 'lead' ahead of the tip along y.

    The last goal is returned once the tip is close to the line end.
    """
    for index, goal in enumerate(goal_spec.goals):
        goal_tip = tool_tip_world(planar_components(goal.q), tip_object)
        if goal_tip[0] >= tip_y + lead:
            return index
    return len(goal_spec.goals) - 1


def pivoting_goal(position, angle, magnitude=GOAL_WRENCH_MAGNITUDE):
    """Grasp frame goal: in-hand 'angle' at the given in-hand position."""
    return GoalSpec(
        (TaskState(
            planar_pose(position[0], position[1], angle),
            goal_wrench(PIVOTING_TABLE_NORMAL, magnitude),
        ), ),
        "grasp",
    )


def pivoting_score(achieved, goal):
    """Absolute angle error in degrees after wrapping, within [0, 180]."""
    diff = (float(goal) - float(achieved) + 180.0) % 360.0 - 180.0
    return abs(diff)


def jacobian_policy_drawing(grasp, relative, width, goal, points, box):
    """Rigid-attachment policy toward a world goal pose.

    The marker is assumed fixed in the gripper. Translation has a closed
    form per rotation; rotations are scanned across the box.

    Args:
        grasp (np.ndarray): World (y, z, phi) of the gripper.
        relative (np.ndarray): Marker (y, z, psi) in the grasp frame.
        width (float): Current gripper width.
        goal (TaskState): World frame goal.
        points (np.ndarray): (M, 3) marker model points.
        box (ActionBox): Drawing action box.

    Returns:
        Action4: In-box action with the lowest predicted cost, ties broken
            by the smallest motion.

    """
    grasp = np.asarray(grasp, dtype=np.float64)
    relative = np.asarray(relative, dtype=np.float64)
    goal_planar = planar_from_vector(pose_to_vector(goal.q))[0]
    low = box.low
    high = box.high
    centroid = np.asarray(points, dtype=np.float64)[:, 1:].mean(axis=0)
    candidates = set(np.linspace(low[3], high[3], _POLICY_ANGLE_STEPS))
    candidates.add(float(np.clip(0.0, low[3], high[3])))
    candidates.add(float(np.clip(
        wrap_angle(goal_planar[2] - grasp[2] - relative[2]),
        low[3], high[3],
    )))

    actions = []
    for dphi in sorted(candidates):
        phi = grasp[2] + dphi
        theta = phi + relative[2]
        # closed form translation of the object for this rotation
        target = goal_planar[:2] + (
            rotation_2d(goal_planar[2]) - rotation_2d(theta)
        ) @ centroid
        motion = target - grasp[:2] - rotation_2d(phi) @ relative[:2]
        motion = np.clip(motion, low[1:3], high[1:3])
        actions.append([
            float(np.clip(width, low[0], high[0])),
            motion[0], motion[1], dphi,
        ])
    actions = np.array(actions)
    predicted = np.zeros((len(actions), 3))
    predicted[:, 0] = grasp[0] + actions[:, 1]
    predicted[:, 1] = grasp[1] + actions[:, 2]
    predicted[:, 2] = grasp[2] + actions[:, 3]
    objects = np.array([
        _compose(row, relative) for row in predicted
    ])
    costs = object_pose_costs(
        planar_to_vector(objects), pose_to_vector(goal.q), points
    )
    best = float(np.min(costs))
    tied = np.flatnonzero(costs <= best + 1e-12)
    norms = np.linalg.norm(actions[tied, 1:], axis=1)
    return action_from_array(actions[tied[int(np.argmin(norms))]])


def _compose(a, b):
    position = rotation_2d(a[2]) @ b[:2] + a[:2]
    return np.array([position[0], position[1], a[2] + b[2]])