"""Grasped tool geometry.

A tool is a convex profile in the grasp plane (object frame y-z), given as
a convex core polygon dilated by a radius, extruded along the jaw squeeze
axis x by a half-thickness. Radius zero gives a plain convex polygon, a
two-vertex core with positive radius gives a capsule.

The object frame origin is the nominal grasp point; the tool axis is the
object z axis.
"""
import math

import numpy as np

from .constants import TASK_DRAWING, TASK_PIVOTING
from .dataset import ObjectModel

DEFAULT_MODEL_SPACING = 0.002


def _segment_distances(points, start, end):
    edge = end - start
    length_sq = float(edge @ edge)
    if length_sq == 0.0:
        return np.linalg.norm(points - start, axis=1)
    ratio = np.clip(((points - start) @ edge) / length_sq, 0.0, 1.0)
    closest = start + ratio[:, None] * edge
    return np.linalg.norm(points - closest, axis=1)


class ToolShape(object):
    """Extruded convex tool.

    Args:
        name (str): Tool name.
        vertices (Iterable[Iterable[float]]): Core polygon (y, z) vertices
            in counter-clockwise order, meters. Two vertices form a segment.
        half_thickness (float): Extrusion half-width along the squeeze axis.
        tip (Iterable[float]): Tip point (y, z) on the profile boundary.
        radius (float): Dilation radius of the core polygon.

    """

    def __init__(self, name, vertices, half_thickness, tip, radius=0.0):
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
        if len(vertices) < 2:
            raise ValueError("Tool profile needs at least two vertices")
        if len(vertices) == 2 and radius <= 0.0:
            raise ValueError("Segment core needs positive radius")
        if len(vertices) >= 3:
            area = self._signed_area(vertices)
            if abs(area) < 1e-10:
                raise ValueError("Tool profile is degenerate")
            if area < 0.0:
                vertices = vertices[::-1].copy()
        if half_thickness <= 0.0:
            raise ValueError("Half thickness must be positive")

        self._name = name
        self._vertices = vertices
        self._radius = float(radius)
        self._half_thickness = float(half_thickness)
        self._tip = np.asarray(tip, dtype=np.float64).reshape(2)
        if abs(self.signed_distance(self._tip[None])[0]) > 1e-6:
            raise ValueError("Tool tip must lie on the profile boundary")

    @staticmethod
    def _signed_area(vertices):
        y = vertices[:, 0]
        z = vertices[:, 1]
        return 0.5 * float(np.sum(y * np.roll(z, -1) - np.roll(y, -1) * z))

    @property
    def name(self):
        return self._name

    @property
    def vertices(self):
        return self._vertices.copy()

    @property
    def radius(self):
        return self._radius

    @property
    def half_thickness(self):
        return self._half_thickness

    @property
    def tip(self):
        return self._tip.copy()

    def _core_distance(self, points):
        vertices = self._vertices
        distances = np.full(len(points), np.inf)
        count = len(vertices)
        edges = count if count >= 3 else 1
        for index in range(edges):
            start = vertices[index]
            end = vertices[(index + 1) % count]
            distances = np.minimum(
                distances, _segment_distances(points, start, end)
            )
        if count >= 3:
            inside = np.ones(len(points), dtype=bool)
            for index in range(count):
                start = vertices[index]
                end = vertices[(index + 1) % count]
                edge = end - start
                rel = points - start
                inside &= (edge[0] * rel[:, 1] - edge[1] * rel[:, 0]) >= 0.0
            distances = np.where(inside, -distances, distances)
        return distances

    def signed_distance(self, points):
        """Signed distance of (N, 2) points to the profile boundary.

        Negative inside the profile.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return self._core_distance(points) - self._radius

    def contains(self, points):
        return self.signed_distance(points) <= 0.0

    def support(self, direction):
        """Lowest profile point along a direction.

        Args:
            direction (np.ndarray): Unit 2D direction in the object frame.

        Returns:
            tuple[float, int]: Minimum of 'direction . p' over the profile
                and the core vertex index attaining it.

        """
        projections = self._vertices @ np.asarray(direction)
        index = int(np.argmin(projections))
        return float(projections[index]) - self._radius, index

    def bounds(self):
        low = self._vertices.min(axis=0) - self._radius
        high = self._vertices.max(axis=0) + self._radius
        return low, high

    def interior_grid(self, spacing):
        """Points of a regular grid covering the profile interior."""
        low, high = self.bounds()
        ys = np.arange(low[0] + 0.5 * spacing, high[0], spacing)
        zs = np.arange(low[1] + 0.5 * spacing, high[1], spacing)
        grid = np.stack(np.meshgrid(ys, zs, indexing="xy"), axis=-1)
        grid = grid.reshape(-1, 2)
        return grid[self.contains(grid)]

    def boundary_points(self, spacing):
        """Points sampled along the profile boundary, counter-clockwise."""
        vertices = self._vertices
        count = len(vertices)
        normals = []
        output = []
        for index in range(count):
            start = vertices[index]
            end = vertices[(index + 1) % count]
            edge = end - start
            length = float(np.linalg.norm(edge))
            normal = np.array([edge[1], -edge[0]]) / length
            normals.append(normal)
            steps = max(int(math.ceil(length / spacing)), 1)
            ratios = np.arange(steps) / steps
            output.append(
                start + ratios[:, None] * edge + self._radius * normal
            )
        if self._radius > 0.0:
            for index in range(count):
                before = normals[index - 1]
                after = normals[index]
                start = math.atan2(before[1], before[0])
                sweep = (math.atan2(after[1], after[0]) - start) % (
                    2.0 * math.pi
                )
                steps = int(math.ceil(sweep * self._radius / spacing))
                if steps < 1:
                    continue
                angles = start + sweep * np.arange(1, steps) / steps
                output.append(vertices[index] + self._radius * np.stack(
                    [np.cos(angles), np.sin(angles)], axis=1
                ))
        return np.concatenate(output, axis=0)

    def extent(self):
        low, high = self.bounds()
        return np.array([
            2.0 * self._half_thickness, high[0] - low[0], high[1] - low[1]
        ])

    def object_model(self, spacing=DEFAULT_MODEL_SPACING):
        """Point cloud geometry of both contact faces.

        Returns:
            ObjectModel: Points (x, y, z) on the faces x = +-half thickness,
                interior grid plus boundary samples.

        """
        grid = np.concatenate(
            [self.interior_grid(spacing), self.boundary_points(spacing)],
            axis=0,
        )
        faces = []
        for sign in (1.0, -1.0):
            face = np.zeros((len(grid), 3))
            face[:, 0] = sign * self._half_thickness
            face[:, 1:] = grid
            faces.append(face)
        return ObjectModel(
            self._name,
            np.concatenate(faces, axis=0),
            np.array([0.0, self._tip[0], self._tip[1]]),
            self.extent(),
        )

    def to_data(self):
        return {
            "name": self._name,
            "vertices": self._vertices.tolist(),
            "radius": self._radius,
            "half_thickness": self._half_thickness,
            "tip": self._tip.tolist(),
        }

    @classmethod
    def from_data(cls, data):
        return cls(
            data["name"],
            data["vertices"],
            data["half_thickness"],
            data["tip"],
            data.get("radius", 0.0),
        )


def rectangle_tool(name, width, length, half_thickness, tip_sign=-1.0):
    """Rectangular bar centered on the grasp point.

    Tip is the middle of the short edge on the 'tip_sign' side of z.
    """
    hw = 0.5 * width
    hl = 0.5 * length
    vertices = [(-hw, -hl), (hw, -hl), (hw, hl), (-hw, hl)]
    return ToolShape(name, vertices, half_thickness, (0.0, tip_sign * hl))


def capsule_tool(name, radius, length, half_thickness, tip_sign=-1.0):
    core = 0.5 * length - radius
    return ToolShape(
        name,
        [(0.0, -core), (0.0, core)],
        half_thickness,
        (0.0, tip_sign * (core + radius)),
        radius=radius,
    )


def pointed_tool(
    name, width, length, tip_length, half_thickness, tip_sign=-1.0,
    tip_offset=0.0
):
    """Bar ending in a point (marker or stick), 'tip_offset' skews it."""
    hw = 0.5 * width
    hl = 0.5 * length
    shoulder = hl - tip_length
    s = tip_sign
    vertices = [
        (-hw, -s * hl),
        (hw, -s * hl),
        (hw, s * shoulder),
        (tip_offset, s * hl),
        (-hw, s * shoulder),
    ]
    if s > 0.0:
        vertices = vertices[::-1]
    return ToolShape(name, vertices, half_thickness, (tip_offset, s * hl))


def wedge_tool(name, base_width, tip_width, length, half_thickness,
               tip_sign=-1.0):
    """Trapezoid narrowing towards the tip edge (spatula-like)."""
    hb = 0.5 * base_width
    ht = 0.5 * tip_width
    hl = 0.5 * length
    s = tip_sign
    vertices = [(-hb, -s * hl), (hb, -s * hl), (ht, s * hl), (-ht, s * hl)]
    if s > 0.0:
        vertices = vertices[::-1]
    return ToolShape(name, vertices, half_thickness, (0.0, s * hl))


def drawing_tools():
    """Markers held below the board, tips point up (+z).

    Returns:
        tuple[list[ToolShape], list[ToolShape]]: Train and test tools.

    """
    up = 1.0
    train = [
        pointed_tool("marker_bullet", 0.018, 0.13, 0.012, 0.009, up),
        pointed_tool("marker_thick", 0.024, 0.14, 0.014, 0.012, up),
        rectangle_tool("marker_chisel", 0.020, 0.13, 0.010, up),
        capsule_tool("marker_round", 0.009, 0.12, 0.009, up),
        pointed_tool("marker_skewed", 0.020, 0.13, 0.012, 0.010, up, 0.004),
    ]
    test = [
        pointed_tool("marker_fine", 0.014, 0.12, 0.016, 0.007, up),
        capsule_tool("marker_jumbo", 0.013, 0.14, 0.013, up),
        wedge_tool("marker_wedge", 0.022, 0.010, 0.13, 0.011, up),
    ]
    return train, test


def pivoting_tools():
    """Tools pivoted on a table below them, tips point down (-z).

    Returns:
        tuple[list[ToolShape], list[ToolShape]]: Train and test tools.

    """
    down = -1.0
    train = [
        rectangle_tool("bar_narrow", 0.016, 0.16, 0.010, down),
        pointed_tool("stick_pointed", 0.020, 0.17, 0.020, 0.010, down),
        capsule_tool("rod_round", 0.010, 0.16, 0.010, down),
        wedge_tool("spatula", 0.024, 0.012, 0.17, 0.011, down),
        rectangle_tool("bar_wide", 0.026, 0.15, 0.012, down),
    ]
    test = [
        pointed_tool("stick_skewed", 0.020, 0.16, 0.018, 0.010, down, 0.005),
        capsule_tool("rod_thick", 0.013, 0.17, 0.012, down),
        wedge_tool("scraper", 0.030, 0.018, 0.15, 0.012, down),
    ]
    return train, test


def tool_library(task):
    """Train and test tools of a task."""
    if task == TASK_DRAWING:
        return drawing_tools()
    if task == TASK_PIVOTING:
        return pivoting_tools()
    raise ValueError("Unknown task \"{}\"".format(task))


def find_tool(name):
    for task_tools in (drawing_tools(), pivoting_tools()):
        for tools in task_tools:
            for tool in tools:
                if tool.name == name:
                    return tool
    raise KeyError("Unknown tool \"{}\"".format(name))


def primitive_cloud(family, rng, n_points=256):
    """Random point cloud of a primitive family for encoder pretraining.

    Args:
        family (str): One of 'box', 'cylinder', 'capsule', 'wedge'.
        rng (np.random.Generator): Generator for size and sampling.
        n_points (int): Number of points.

    Returns:
        np.ndarray: (n_points, 3) surface points.

    """
    size = rng.uniform(0.6, 1.4, 3) * np.array([0.01, 0.01, 0.06])
    if family == "box":
        points = rng.uniform(-1.0, 1.0, (n_points, 3)) * size
        face_axis = rng.integers(0, 3, n_points)
        face_sign = rng.choice([-1.0, 1.0], n_points)
        points[np.arange(n_points), face_axis] = (
            face_sign * size[face_axis]
        )
        return points
    if family == "cylinder":
        angle = rng.uniform(0.0, 2.0 * math.pi, n_points)
        height = rng.uniform(-size[2], size[2], n_points)
        return np.stack([
            size[0] * np.cos(angle), size[0] * np.sin(angle), height
        ], axis=1)
    if family == "capsule":
        direction = rng.normal(size=(n_points, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        points = direction * size[0]
        points[:, 2] += np.where(points[:, 2] >= 0.0, 1.0, -1.0) * size[2]
        return points
    if family == "wedge":
        ratio = rng.uniform(0.0, 1.0, n_points)
        width = size[1] * (1.0 - 0.8 * ratio)
        points = np.stack([
            rng.choice([-1.0, 1.0], n_points) * size[0],
            rng.uniform(-1.0, 1.0, n_points) * width,
            (2.0 * ratio - 1.0) * size[2],
        ], axis=1)
        return points
    raise ValueError("Unknown primitive family \"{}\"".format(family))
