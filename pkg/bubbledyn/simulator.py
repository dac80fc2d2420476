"""Quasi-static membrane grasp simulator.

Planar world: the grasp plane is the world y-z plane, the jaws squeeze
along x. Two flat membranes touch the faces of an extruded tool; every
object contact point is tied to the membrane by a tangential spring whose
force is capped by friction. The environment is a plane the tool cannot
penetrate, with capped stick-slip springs at contact vertices.

Each step moves the gripper, transports the object rigidly and then
minimizes the total spring energy over the planar object pose. Contacts
with the environment are handled by an active set of touching profile
vertices: zero (free), one (pivot and slide) or two (flat on the plane,
slide only).
"""
import math
import logging
import collections

import numpy as np
from scipy import ndimage

from .constants import (
    MAP_SHAPE,
    RAW_MAP_SHAPE,
    CROP_OFFSET,
    SENSOR_NOISE_STD,
    DROP_FORCE_THRESHOLD,
    MAX_PENETRATION_RATIO,
    MIN_DEFORMATION,
    MAX_DEFORMATION,
)
from .exceptions import SolverError, ConfigError
from .poses import (
    MembraneState,
    make_wrench,
    wrench_to_vector,
    pose_to_vector,
    planar_pose,
    planar_components,
    planar_compose,
    planar_inverse,
    rotation_2d,
    wrap_angle,
)
from .processing import (
    DEFAULT_PIXEL_PITCH,
    pixel_coordinates,
    process_raw,
    make_camera_pair,
)
from .tool_shapes import ToolShape
from .utils import write_json, read_json

SimState = collections.namedtuple(
    "SimState",
    (
        "grasp_pose",
        "object_pose",
        "width",
        "in_contact",
        "dropped",
        # (u, v, psi) relative pose where membrane springs are unstretched
        "anchor",
        # ((vertex index, tangential anchor, normal load), ...)
        "env_contacts",
    )
)

# Length turning rotation steps into comparable translations
_ANGLE_SCALE = 0.05
_LINE_SEARCH_STEPS = 40
_BISECTION_STEPS = 50
_MAX_MODE_SWITCHES = 50
_TOUCH_TOLERANCE = 1e-9


class SimConfig(object):
    """Simulator parameters.

    Args:
        stiffness (float): Membrane normal stiffness per pixel cell, N/m.
        shear_ratio (float): Tangential to normal cell stiffness ratio.
        friction (float): Object-membrane friction coefficient.
        env_friction (float): Object-environment friction coefficient.
        env_stiffness (float): Tangential stiffness of environment
            contacts before slip, N/m.
        pitch (float): Membrane pixel pitch in meters.
        map_shape (tuple[int, int]): Membrane grid (rows along world z).
        rest_gap (float): Protrusion of each undeformed membrane past its
            jaw, meters. Penetration is 'half_thickness + rest_gap - gw / 2'.
        membrane_thickness (float): Membrane depth, meters.
        env_point (Iterable[float]): Point on the environment plane (world).
        env_normal (Iterable[float]): Plane normal toward the free side.
        smoothing_radius (float): Gaussian smoothing sigma in pixels.
        noise_std (float): Sensor noise sigma in meters.
        solver_tolerance (float): Convergence threshold of pose updates, m.
        solver_max_iterations (int): Iteration budget of one solve.
        drop_threshold (float): Grip force below which the tool is dropped.
        contact_spacing (float): Spacing of object contact points, meters.
        outer_passes (int): Friction load refinement passes per step.
        raw_standoff (float): Raw sensor value of undeformed membrane.

    """

    def __init__(
        self,
        stiffness=0.25,
        shear_ratio=1.0,
        friction=0.5,
        env_friction=0.5,
        env_stiffness=1e5,
        pitch=DEFAULT_PIXEL_PITCH,
        map_shape=MAP_SHAPE,
        rest_gap=0.014,
        membrane_thickness=0.03,
        env_point=(0.0, 0.0, 0.0),
        env_normal=(0.0, 0.0, 1.0),
        smoothing_radius=1.0,
        noise_std=SENSOR_NOISE_STD,
        solver_tolerance=1e-9,
        solver_max_iterations=5000,
        drop_threshold=DROP_FORCE_THRESHOLD,
        contact_spacing=0.002,
        outer_passes=3,
        raw_standoff=0.02,
    ):
        if stiffness <= 0.0:
            raise ConfigError("Membrane stiffness must be positive")
        for name, value in (
            ("friction", friction), ("env_friction", env_friction)
        ):
            if not 0.0 <= value <= 2.0:
                raise ConfigError(
                    "Coefficient '{}' must be in [0, 2] got {}".format(
                        name, value
                    )
                )
        if pitch <= 0.0:
            raise ConfigError("Pixel pitch must be positive")
        env_normal = np.asarray(env_normal, dtype=np.float64).reshape(3)
        if abs(env_normal[0]) > 1e-12:
            raise ConfigError("Environment normal must lie in the grasp plane")
        norm = np.linalg.norm(env_normal)
        if norm == 0.0:
            raise ConfigError("Environment normal must be non-zero")

        self.stiffness = float(stiffness)
        self.shear_ratio = float(shear_ratio)
        self.friction = float(friction)
        self.env_friction = float(env_friction)
        self.env_stiffness = float(env_stiffness)
        self.pitch = float(pitch)
        self.map_shape = tuple(int(dim) for dim in map_shape)
        self.rest_gap = float(rest_gap)
        self.membrane_thickness = float(membrane_thickness)
        self.env_point = np.asarray(env_point, dtype=np.float64).reshape(3)
        self.env_normal = env_normal / norm
        self.smoothing_radius = float(smoothing_radius)
        self.noise_std = float(noise_std)
        self.solver_tolerance = float(solver_tolerance)
        self.solver_max_iterations = int(solver_max_iterations)
        self.drop_threshold = float(drop_threshold)
        self.contact_spacing = float(contact_spacing)
        self.outer_passes = int(outer_passes)
        self.raw_standoff = float(raw_standoff)

    @property
    def env_point_2d(self):
        return self.env_point[1:].copy()

    @property
    def env_normal_2d(self):
        return self.env_normal[1:].copy()

    @property
    def env_tangent_2d(self):
        normal = self.env_normal[1:]
        return np.array([-normal[1], normal[0]])

    @property
    def membrane_half_extent(self):
        """Half extents (y, z) of a membrane in the grasp plane."""
        rows, cols = self.map_shape
        return 0.5 * cols * self.pitch, 0.5 * rows * self.pitch

    @property
    def cell_ratio(self):
        """Pixel cells represented by one object contact point."""
        return (self.contact_spacing / self.pitch) ** 2

    def to_data(self):
        return {
            "stiffness": self.stiffness,
            "shear_ratio": self.shear_ratio,
            "friction": self.friction,
            "env_friction": self.env_friction,
            "env_stiffness": self.env_stiffness,
            "pitch": self.pitch,
            "map_shape": list(self.map_shape),
            "rest_gap": self.rest_gap,
            "membrane_thickness": self.membrane_thickness,
            "env_point": self.env_point.tolist(),
            "env_normal": self.env_normal.tolist(),
            "smoothing_radius": self.smoothing_radius,
            "noise_std": self.noise_std,
            "solver_tolerance": self.solver_tolerance,
            "solver_max_iterations": self.solver_max_iterations,
            "drop_threshold": self.drop_threshold,
            "contact_spacing": self.contact_spacing,
            "outer_passes": self.outer_passes,
            "raw_standoff": self.raw_standoff,
        }

    @classmethod
    def from_data(cls, data):
        known = set(cls().to_data().keys())
        return cls(**{
            key: value
            for key, value in (data or {}).items()
            if key in known
        })


# --- State helpers ---
def make_sim_state(
    grasp, relative, width, anchor=None, env_contacts=(), dropped=False
):
    """Create simulator state from planar grasp and in-hand poses.

    Args:
        grasp (Iterable[float]): World (y, z, phi) of the grasp frame.
        relative (Iterable[float]): Object (y, z, psi) in the grasp frame.
        width (float): Gripper width in meters.
        anchor (Optional[Iterable[float]]): Unstretched membrane pose,
            defaults to 'relative'.
        env_contacts (tuple): Environment contacts.
        dropped (bool): Terminal drop flag.

    Returns:
        SimState: New state.

    """
    grasp = np.asarray(grasp, dtype=np.float64)
    relative = np.asarray(relative, dtype=np.float64)
    obj = planar_compose(grasp, relative)
    if anchor is None:
        anchor = relative
    return SimState(
        planar_pose(*grasp),
        planar_pose(*obj),
        float(width),
        bool(sum(load for _, _, load in env_contacts) > 0.0),
        bool(dropped),
        tuple(float(value) for value in anchor),
        tuple(env_contacts),
    )


def grasp_planar(state):
    return np.array(planar_components(state.grasp_pose))


def object_planar(state):
    return np.array(planar_components(state.object_pose))


def relative_planar(state):
    """Object (y, z, psi) in the grasp frame."""
    return planar_compose(
        planar_inverse(grasp_planar(state)), object_planar(state)
    )


def in_hand_angle(state):
    """Angle between tool axis and grasp z axis, radians."""
    return float(relative_planar(state)[2])


def penetration_depth(tool, width, cfg):
    depth = tool.half_thickness + cfg.rest_gap - 0.5 * width
    limit = MAX_PENETRATION_RATIO * cfg.membrane_thickness
    return float(np.clip(depth, 0.0, limit))


def min_width(tool, cfg):
    """Narrowest width before the membrane penetration limit is reached."""
    limit = MAX_PENETRATION_RATIO * cfg.membrane_thickness
    return 2.0 * (tool.half_thickness + cfg.rest_gap - limit)


def height_above_environment(state, cfg):
    """Signed distance of the grasp origin to the environment plane."""
    return float(
        (state.grasp_pose.position - cfg.env_point) @ cfg.env_normal
    )


def _huber_energy(distances, stiffness, cap):
    if cap <= 0.0:
        return np.zeros_like(distances)
    knee = cap / stiffness
    return np.where(
        distances <= knee,
        0.5 * stiffness * distances ** 2,
        cap * distances - 0.5 * cap * knee,
    )


def _huber_scale(distances, stiffness, cap):
    """Force per unit displacement, so 'force = scale * delta'."""
    if cap <= 0.0:
        return np.zeros_like(distances)
    knee = cap / stiffness
    safe = np.where(distances > 0.0, distances, 1.0)
    return np.where(distances <= knee, stiffness, cap / safe)


def _perpendicular(vectors):
    """Rotate 2D vectors by +90 degrees."""
    vectors = np.asarray(vectors)
    return np.stack([-vectors[..., 1], vectors[..., 0]], axis=-1)


class EquilibriumProblem(object):
    """Energy of one quasi-static solve with frozen contact sets.

    Args:
        tool (ToolShape): Grasped tool.
        cfg (SimConfig): Simulator config.
        grasp (np.ndarray): World (y, z, phi) of the gripper.
        width (float): Gripper width.
        anchor (Iterable[float]): Unstretched relative pose of the membrane.
        contact_points (np.ndarray): (K, 2) object contact points.
        active_pose (np.ndarray): Object pose deciding which contact points
            lie on the membranes.
        env_contacts (tuple): Anchored environment contacts.

    """

    def __init__(
        self,
        tool,
        cfg,
        grasp,
        width,
        anchor,
        contact_points,
        active_pose,
        env_contacts=(),
    ):
        self._tool = tool
        self._cfg = cfg
        self._grasp = np.asarray(grasp, dtype=np.float64)
        self._grasp_rotation = rotation_2d(self._grasp[2])
        self._anchor = np.asarray(anchor, dtype=np.float64)
        self._depth = penetration_depth(tool, width, cfg)

        ratio = cfg.cell_ratio
        self._normal_force = cfg.stiffness * self._depth * ratio
        self._stiffness = 2.0 * cfg.shear_ratio * cfg.stiffness * ratio
        self._cap = 2.0 * cfg.friction * self._normal_force

        self._all_points = np.asarray(contact_points, dtype=np.float64)
        self._points = self._all_points
        self._anchor_points = None
        self.set_active(active_pose)

        self._vertices = tool.vertices
        self._radius = tool.radius
        self._normal = cfg.env_normal_2d
        self._tangent = cfg.env_tangent_2d
        self._base = cfg.env_point_2d + self._radius * self._normal
        self._offset = float(cfg.env_point_2d @ self._normal)
        self._env_contacts = tuple(env_contacts)
        self.history = []
        self.iterations = 0
        self._log = None

    @property
    def active_count(self):
        return len(self._points)

    @property
    def grip_force(self):
        """Normal force of each jaw on the tool."""
        if self._depth <= 0.0:
            return 0.0
        return self._normal_force * len(self._points)

    def relative(self, q):
        position = self._grasp_rotation.T @ (q[:2] - self._grasp[:2])
        angle = float(wrap_angle(q[2] - self._grasp[2]))
        return np.array([position[0], position[1], angle])

    def _grasp_positions(self, points, q):
        rel = self.relative(q)
        return points @ rotation_2d(rel[2]).T + rel[:2], rel

    def set_active(self, q):
        """Freeze contact points lying on the membranes at pose 'q'."""
        positions, _ = self._grasp_positions(self._all_points, q)
        half_y, half_z = self._cfg.membrane_half_extent
        mask = (
            (np.abs(positions[:, 0]) <= half_y)
            & (np.abs(positions[:, 1]) <= half_z)
        )
        self._points = self._all_points[mask]
        self._anchor_points = (
            self._points @ rotation_2d(self._anchor[2]).T + self._anchor[:2]
        )

    # --- environment geometry ---
    def signed_distances(self, q):
        world = self._vertices @ rotation_2d(q[2]).T + q[:2]
        return world @ self._normal - self._radius - self._offset

    def project(self, q):
        """Translate along the plane normal out of penetration."""
        q = np.array(q, dtype=np.float64)
        lowest = float(np.min(self.signed_distances(q)))
        if lowest < 0.0:
            q[:2] += -lowest * self._normal
        return q

    def touching(self, q):
        distances = self.signed_distances(q)
        order = np.argsort(distances, kind="stable")
        return tuple(
            int(index)
            for index in order[:2]
            if distances[index] <= _TOUCH_TOLERANCE
        )

    # --- energy ---
    def _membrane(self, q):
        positions, rel = self._grasp_positions(self._points, q)
        delta = positions - self._anchor_points
        distances = np.linalg.norm(delta, axis=1)
        return positions, rel, delta, distances

    def _env_terms(self, q):
        rotation = rotation_2d(q[2])
        for index, anchor, load in self._env_contacts:
            vertex = rotation @ self._vertices[index]
            world = vertex + q[:2] - self._radius * self._normal
            offset = float(self._tangent @ world) - anchor
            cap = self._cfg.env_friction * load
            yield vertex, offset, cap

    def energy(self, q):
        _, _, _, distances = self._membrane(q)
        total = float(np.sum(
            _huber_energy(distances, self._stiffness, self._cap)
        ))
        for _, offset, cap in self._env_terms(q):
            total += float(_huber_energy(
                np.array([abs(offset)]), self._cfg.env_stiffness, cap
            )[0])
        return total

    def spring_forces(self, q):
        """Membrane spring forces on the gripper, grasp frame (K, 2)."""
        positions, _, delta, distances = self._membrane(q)
        scale = _huber_scale(distances, self._stiffness, self._cap)
        return positions, scale[:, None] * delta

    def gradient(self, q):
        positions, rel, delta, distances = self._membrane(q)
        scale = _huber_scale(distances, self._stiffness, self._cap)
        forces = scale[:, None] * delta
        arms = positions - rel[:2]
        grad = np.zeros(3)
        grad[:2] = self._grasp_rotation @ forces.sum(axis=0)
        grad[2] = float(np.sum(forces * _perpendicular(arms)))
        for vertex, offset, cap in self._env_terms(q):
            distance = abs(offset)
            force = float(_huber_scale(
                np.array([distance]), self._cfg.env_stiffness, cap
            )[0]) * offset
            grad[:2] += force * self._tangent
            grad[2] += force * float(self._tangent @ _perpendicular(vertex))
        return grad

    def preconditioner(self):
        diag = np.zeros(3)
        count = max(len(self._points), 1)
        diag[:2] = self._stiffness * count
        diag[2] = self._stiffness * max(
            float(np.sum(self._points ** 2)), count * 1e-6
        )
        for index, _, _ in self._env_contacts:
            diag[:2] += self._cfg.env_stiffness
            diag[2] += self._cfg.env_stiffness * float(
                self._vertices[index] @ self._vertices[index]
            )
        return np.maximum(diag, 1e-12)

    # --- constrained parametrization ---
    def _chart_jacobian(self, active, q):
        if not active:
            return np.eye(3)
        rotation = rotation_2d(q[2])
        lever = _perpendicular(rotation @ self._vertices[active[0]])
        if len(active) == 1:
            return np.array([
                [self._tangent[0], -lever[0]],
                [self._tangent[1], -lever[1]],
                [0.0, 1.0],
            ])
        return np.array([[self._tangent[0]], [self._tangent[1]], [0.0]])

    def _chart_coordinates(self, active, q):
        if not active:
            return np.array(q, dtype=np.float64)
        vertex = rotation_2d(q[2]) @ self._vertices[active[0]]
        slide = float(self._tangent @ (q[:2] + vertex - self._base))
        if len(active) == 1:
            return np.array([slide, q[2]])
        return np.array([slide])

    def _chart_pose(self, active, x, q_ref):
        if not active:
            return np.array(x, dtype=np.float64)
        theta = x[1] if len(active) == 1 else q_ref[2]
        vertex = rotation_2d(theta) @ self._vertices[active[0]]
        position = self._base + x[0] * self._tangent - vertex
        return np.array([position[0], position[1], theta])

    def _multipliers(self, active, q, grad):
        """Normal reactions of active vertices at a stationary point."""
        push = float(grad[:2] @ self._normal)
        if len(active) == 1:
            return np.array([push])
        rotation = rotation_2d(q[2])
        levers = [
            float(self._normal @ _perpendicular(rotation @ self._vertices[i]))
            for i in active
        ]
        matrix = np.array([[1.0, 1.0], levers])
        try:
            return np.linalg.solve(matrix, np.array([push, grad[2]]))
        except np.linalg.LinAlgError:
            return np.array([0.5 * push, 0.5 * push])

    def _scaled_norm(self, dq):
        return math.hypot(math.hypot(dq[0], dq[1]), _ANGLE_SCALE * dq[2])

    def solve(self, q0):
        """Minimize energy from 'q0' under the non-penetration constraint.

        Returns:
            tuple[np.ndarray, tuple[int, ...], np.ndarray]: Object pose,
                active vertices and their normal reactions.

        Raises:
            SolverError: Iteration budget exhausted.

        """
        cfg = self._cfg
        tolerance = cfg.solver_tolerance
        q = self.project(q0)
        active = self.touching(q)
        energy = self.energy(q)
        self.history = [energy]
        diag = self.preconditioner()
        switches = 0
        residual = float("inf")
        for iteration in range(cfg.solver_max_iterations):
            self.iterations = iteration
            grad = self.gradient(q)
            jac = self._chart_jacobian(active, q)
            x = self._chart_coordinates(active, q)
            step = -(jac.T @ grad) / ((jac ** 2).T @ diag)
            residual = self._scaled_norm(jac @ step)

            moved = 0.0
            if residual > tolerance:
                eta = 1.0
                for _ in range(_LINE_SEARCH_STEPS):
                    candidate = self._chart_pose(active, x + eta * step, q)
                    hit = self._violation(candidate, active)
                    new_active = active
                    if hit is not None:
                        eta = self._boundary_step(active, x, step, q, eta)
                        candidate = self._chart_pose(active, x + eta * step, q)
                        if len(active) < 2:
                            new_active = tuple(sorted(active + (hit, )))
                    cand_energy = self.energy(candidate)
                    if cand_energy <= energy:
                        moved = self._scaled_norm(candidate - q)
                        q = candidate
                        energy = cand_energy
                        if new_active != active:
                            switches += 1
                            active = new_active
                        self.history.append(energy)
                        break
                    eta *= 0.5
            if moved > tolerance:
                continue

            # stationary on the current contact set
            if active and switches < _MAX_MODE_SWITCHES:
                reactions = self._multipliers(active, q, self.gradient(q))
                weakest = int(np.argmin(reactions))
                if reactions[weakest] < 0.0:
                    active = tuple(
                        index
                        for position, index in enumerate(active)
                        if position != weakest
                    )
                    switches += 1
                    continue
            reactions = (
                self._multipliers(active, q, self.gradient(q))
                if active else np.zeros(0)
            )
            self.log.debug(
                "Solve converged in {} iterations, energy {:.6g}".format(
                    iteration, energy
                )
            )
            return q, active, np.maximum(reactions, 0.0)
        raise SolverError(residual, cfg.solver_max_iterations)

    @property
    def log(self):
        if self._log is None:
            self._log = logging.getLogger(self.__class__.__name__)
        return self._log

    def _violation(self, q, active):
        distances = self.signed_distances(q)
        distances[list(active)] = np.inf
        index = int(np.argmin(distances))
        if distances[index] < 0.0:
            return index
        return None

    def _boundary_step(self, active, x, step, q_ref, eta):
        low, high = 0.0, eta
        for _ in range(_BISECTION_STEPS):
            mid = 0.5 * (low + high)
            pose = self._chart_pose(active, x + mid * step, q_ref)
            if self._violation(pose, active) is None:
                low = mid
            else:
                high = mid
        return low

    def slipped_anchor(self, q):
        """Membrane anchor after slip so no spring exceeds its cap."""
        rel = self.relative(q)
        if len(self._points) == 0 or self._cap <= 0.0:
            return rel
        knee = self._cap / self._stiffness * (1.0 + 1e-9)
        diff = rel - self._anchor
        diff[2] = float(wrap_angle(diff[2]))
        positions = self._points @ rotation_2d(rel[2]).T + rel[:2]

        def stretch(alpha):
            anchor = self._anchor + alpha * diff
            anchor_points = (
                self._points @ rotation_2d(anchor[2]).T + anchor[:2]
            )
            return float(np.max(np.linalg.norm(
                positions - anchor_points, axis=1
            )))

        if stretch(0.0) <= knee:
            return self._anchor.copy()
        low, high = 0.0, 1.0
        for _ in range(_BISECTION_STEPS):
            mid = 0.5 * (low + high)
            if stretch(mid) <= knee:
                high = mid
            else:
                low = mid
        anchor = self._anchor + high * diff
        anchor[2] = float(wrap_angle(anchor[2]))
        return anchor

    def env_anchors(self, q, active, reactions):
        """Anchors of touching vertices, keeping stuck ones."""
        previous = {index: anchor for index, anchor, _ in self._env_contacts}
        rotation = rotation_2d(q[2])
        output = []
        for index, load in zip(active, reactions):
            world = (
                rotation @ self._vertices[index] + q[:2]
                - self._radius * self._normal
            )
            position = float(self._tangent @ world)
            anchor = previous.get(index, position)
            output.append((int(index), float(anchor), float(load)))
        return tuple(output)

    def slipped_env_anchors(self, q, contacts):
        rotation = rotation_2d(q[2])
        output = []
        for index, anchor, load in contacts:
            world = (
                rotation @ self._vertices[index] + q[:2]
                - self._radius * self._normal
            )
            position = float(self._tangent @ world)
            knee = self._cfg.env_friction * load / self._cfg.env_stiffness
            offset = position - anchor
            if abs(offset) > knee:
                anchor = position - math.copysign(knee, offset)
            output.append((index, float(anchor), float(load)))
        return tuple(output)


# --- Operations ---
def render_depth_pair(state, tool, cfg, rng=None):
    """Deformation maps (2, H, W) of left and right membrane.

    Args:
        state (SimState): Simulator state.
        tool (ToolShape): Grasped tool.
        cfg (SimConfig): Simulator config.
        rng (Optional[np.random.Generator]): Sensor noise source, no noise
            when not passed.

    Returns:
        np.ndarray: Deformation in meters, positive toward the cameras.

    """
    rows, cols = cfg.map_shape
    maps = np.zeros((2, rows, cols))
    depth = penetration_depth(tool, state.width, cfg)
    if not state.dropped and depth > 0.0:
        xs, ys = pixel_coordinates(cfg.map_shape, cfg.pitch)
        rel = relative_planar(state)
        inverse = planar_inverse(rel)
        rotation = rotation_2d(inverse[2])
        for index, sign in enumerate((1.0, -1.0)):
            grasp_points = np.stack(
                [sign * xs.ravel(), -ys.ravel()], axis=1
            )
            local = grasp_points @ rotation.T + inverse[:2]
            inside = tool.contains(local).reshape(rows, cols)
            maps[index][inside] = depth
        if cfg.smoothing_radius > 0.0:
            for index in range(2):
                maps[index] = ndimage.gaussian_filter(
                    maps[index], cfg.smoothing_radius, mode="nearest"
                )
    if rng is not None and cfg.noise_std > 0.0:
        maps = maps + rng.normal(0.0, cfg.noise_std, maps.shape)
    return np.clip(maps, MIN_DEFORMATION, MAX_DEFORMATION)


def render_raw_pair(state, tool, cfg, rng=None):
    """Raw sensor maps and the undeformed reference.

    Raw values are membrane offsets along the camera axis, growing toward
    the camera. Border pixels outside the membrane see the jaw frame and
    carry heavier noise.

    Returns:
        tuple[np.ndarray, np.ndarray]: Measured and reference (2, 224, 171)
            maps.

    """
    deformation = render_depth_pair(state, tool, cfg, rng)
    reference = np.full((2, ) + RAW_MAP_SHAPE, cfg.raw_standoff)
    measured = reference.copy()
    if rng is not None and cfg.noise_std > 0.0:
        measured += rng.normal(0.0, 10.0 * cfg.noise_std, measured.shape)
    row, col = CROP_OFFSET
    rows, cols = deformation.shape[1:]
    measured[:, row:row + rows, col:col + cols] = (
        cfg.raw_standoff + deformation
    )
    return measured, reference


def _state_problem(state, tool, cfg, contact_points):
    grasp = grasp_planar(state)
    return EquilibriumProblem(
        tool,
        cfg,
        grasp,
        state.width,
        state.anchor,
        contact_points,
        object_planar(state),
        state.env_contacts,
    )


def compute_wrench(state, tool, cfg, contact_points=None):
    """Reaction wrench on the gripper in the grasp frame.

    Normal membrane forces of the two jaws cancel; tangential spring forces
    (capped by friction) and their torque about the grasp origin remain.
    """
    if state.dropped:
        return make_wrench()
    if contact_points is None:
        contact_points = tool.interior_grid(cfg.contact_spacing)
    problem = _state_problem(state, tool, cfg, contact_points)
    if problem.active_count == 0:
        return make_wrench()
    positions, forces = problem.spring_forces(object_planar(state))
    jaw = 0.5 * state.width - cfg.rest_gap
    normal = problem.grip_force / max(problem.active_count, 1)
    force = np.zeros(3)
    torque = np.zeros(3)
    for sign in (1.0, -1.0):
        points = np.zeros((len(positions), 3))
        points[:, 0] = sign * jaw
        points[:, 1:] = positions
        # half of the shared tangential spring on each jaw
        jaw_forces = np.zeros((len(positions), 3))
        jaw_forces[:, 0] = sign * normal
        jaw_forces[:, 1:] = 0.5 * forces
        force += jaw_forces.sum(axis=0)
        torque += np.cross(points, jaw_forces).sum(axis=0)
    return make_wrench(force, torque)


def grip_force(state, tool, cfg, contact_points=None):
    if contact_points is None:
        contact_points = tool.interior_grid(cfg.contact_spacing)
    return _state_problem(state, tool, cfg, contact_points).grip_force


def sim_step(state, action, tool, cfg, contact_points=None):
    """Advance the simulation by one quasi-static step.

    Args:
        state (SimState): Current state.
        action (Action4): Absolute width and planar gripper motion; the
            rotation 'dphi' is about the grasp origin.
        tool (ToolShape): Grasped tool.
        cfg (SimConfig): Simulator config.
        contact_points (Optional[np.ndarray]): Cached object contact points.

    Returns:
        SimState: Next state; 'dropped' states are returned unchanged.

    Raises:
        SolverError: Equilibrium solve did not converge.

    """
    if state.dropped:
        return state
    if contact_points is None:
        contact_points = tool.interior_grid(cfg.contact_spacing)

    grasp = grasp_planar(state)
    new_grasp = np.array([
        grasp[0] + action.dy,
        grasp[1] + action.dz,
        float(wrap_angle(grasp[2] + action.dphi)),
    ])
    width = max(float(action.gw), min_width(tool, cfg))
    q = planar_compose(new_grasp, relative_planar(state))

    contacts = state.env_contacts
    problem = None
    for _ in range(max(cfg.outer_passes, 1)):
        problem = EquilibriumProblem(
            tool, cfg, new_grasp, width, state.anchor, contact_points,
            problem_pose(q, tool, cfg), contacts,
        )
        q, active, reactions = problem.solve(q)
        contacts = problem.env_anchors(q, active, reactions)

    contacts = problem.slipped_env_anchors(q, contacts)
    anchor = problem.slipped_anchor(q)
    dropped = problem.grip_force < cfg.drop_threshold
    rel = problem.relative(q)
    return make_sim_state(
        new_grasp, rel, width, anchor, contacts, dropped
    )


def problem_pose(q, tool, cfg):
    """Pose used to freeze membrane contact points (projected transport)."""
    q = np.asarray(q, dtype=np.float64)
    distances = (
        tool.vertices @ rotation_2d(q[2]).T + q[:2]
    ) @ cfg.env_normal_2d - tool.radius - float(
        cfg.env_point_2d @ cfg.env_normal_2d
    )
    lowest = float(np.min(distances))
    if lowest < 0.0:
        q = q.copy()
        q[:2] += -lowest * cfg.env_normal_2d
    return q


class MembraneSimulator(object):
    """Simulator bound to one tool.

    Args:
        tool (ToolShape): Grasped tool.
        cfg (Optional[SimConfig]): Simulator config.

    """

    def __init__(self, tool, cfg=None):
        if cfg is None:
            cfg = SimConfig()
        self._tool = tool
        self._cfg = cfg
        self._contact_points = tool.interior_grid(cfg.contact_spacing)
        self._cameras = None
        self._log = None

    @property
    def log(self):
        if self._log is None:
            self._log = logging.getLogger(self.__class__.__name__)
        return self._log

    @property
    def tool(self):
        return self._tool

    @property
    def config(self):
        return self._cfg

    @property
    def cameras(self):
        if self._cameras is None:
            self._cameras = make_camera_pair(pitch=self._cfg.pitch)
        return self._cameras

    def render(self, state, rng=None):
        return render_depth_pair(state, self._tool, self._cfg, rng)

    def render_raw(self, state, rng=None):
        return render_raw_pair(state, self._tool, self._cfg, rng)

    def wrench(self, state):
        return compute_wrench(
            state, self._tool, self._cfg, self._contact_points
        )

    def grip_force(self, state):
        return grip_force(state, self._tool, self._cfg, self._contact_points)

    def step(self, state, action):
        next_state = sim_step(
            state, action, self._tool, self._cfg, self._contact_points
        )
        if next_state.dropped:
            self.log.info("Tool \"{}\" slipped out of the grasp".format(
                self._tool.name
            ))
        return next_state

    def membrane_state(self, state, rng=None):
        """Observable state: pooled signature, wrench and grasp pose.

        Returns:
            tuple[MembraneState, np.ndarray]: Pooled state and the full
                resolution deformation maps.

        """
        measured, reference = self.render_raw(state, rng)
        full, pooled = process_raw(measured, reference)
        membrane = MembraneState(
            pooled,
            wrench_to_vector(self.wrench(state)),
            pose_to_vector(state.grasp_pose),
        )
        return membrane, full

    def energy_problem(self, state, action_grasp=None):
        """Energy of the current configuration, for inspection."""
        grasp = grasp_planar(state) if action_grasp is None else action_grasp
        return EquilibriumProblem(
            self._tool,
            self._cfg,
            grasp,
            state.width,
            state.anchor,
            self._contact_points,
            object_planar(state),
            state.env_contacts,
        )


# --- Scenario files ---
def state_to_data(state):
    return {
        "grasp": list(grasp_planar(state)),
        "relative": list(relative_planar(state)),
        "width": state.width,
        "anchor": list(state.anchor),
        "env_contacts": [list(item) for item in state.env_contacts],
        "dropped": state.dropped,
    }


def state_from_data(data):
    return make_sim_state(
        data["grasp"],
        data["relative"],
        data["width"],
        data.get("anchor"),
        tuple(
            (int(index), float(anchor), float(load))
            for index, anchor, load in data.get("env_contacts", [])
        ),
        data.get("dropped", False),
    )


def save_scenario(path, tool, cfg, state):
    write_json(path, {
        "tool": tool.to_data(),
        "config": cfg.to_data(),
        "state": state_to_data(state),
    })


def load_scenario(path):
    """Read scenario file.

    Returns:
        tuple[ToolShape, SimConfig, SimState]: Scenario parts.

    """
    data = read_json(path)
    return (
        ToolShape.from_data(data["tool"]),
        SimConfig.from_data(data.get("config")),
        state_from_data(data["state"]),
    )
