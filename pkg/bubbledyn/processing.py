"""Tactile signature pipeline.

Raw sensor maps are membrane offsets along each camera axis, growing toward
the camera. The pipeline crops them, subtracts the undeformed reference and
average-pools the result:

    2x224x171 --crop--> 2x175x140 --pool--> 2x25x20 --upsample--> 2x175x140
"""
import numpy as np

from .constants import (
    RAW_MAP_SHAPE,
    MAP_SHAPE,
    POOLED_MAP_SHAPE,
    POOL_FACTOR,
    CROP_OFFSET,
)
from .exceptions import ShapeError
from .dataset import make_point_cloud
from .poses import make_pose, rotation_matrix, matrix_to_rotvec

DEFAULT_PIXEL_PITCH = 0.0004
# Nominal distance of the undeformed membrane surface from the grasp plane
DEFAULT_CAMERA_OFFSET = 0.01


def _check_shape(values, shape, what):
    values = np.asarray(values)
    if values.shape[-2:] != tuple(shape) or values.ndim < 2:
        raise ShapeError(
            shape,
            values.shape,
            "{} expects trailing shape {} got {}".format(
                what, tuple(shape), values.shape
            )
        )
    return values


def crop_raw(raw):
    """Remove sensor borders from raw maps.

    Args:
        raw (np.ndarray): Maps with trailing shape (224, 171).

    Returns:
        np.ndarray: View with trailing shape (175, 140).

    Raises:
        ShapeError: Trailing shape is not the raw shape.

    """
    raw = _check_shape(raw, RAW_MAP_SHAPE, "Crop")
    row, col = CROP_OFFSET
    height, width = MAP_SHAPE
    return raw[..., row:row + height, col:col + width]


def deformation_map(meas, ref):
    """Pixel-wise deformation, positive toward the camera."""
    meas = np.asarray(meas)
    ref = np.asarray(ref)
    if meas.shape != ref.shape:
        raise ShapeError(ref.shape, meas.shape)
    return meas - ref


def downsample(maps, factor=POOL_FACTOR):
    """Average-pool the last two axes by 'factor'."""
    maps = np.asarray(maps)
    if maps.ndim < 2:
        raise ShapeError(None, maps.shape, "Pooling needs a 2D map")
    height, width = maps.shape[-2:]
    if height % factor or width % factor:
        raise ShapeError(
            None,
            maps.shape,
            "Map {}x{} is not divisible by {}".format(height, width, factor)
        )
    shape = maps.shape[:-2] + (
        height // factor, factor, width // factor, factor
    )
    return maps.reshape(shape).mean(axis=(-3, -1))


def _interpolation_matrix(size_in, factor):
    """(size_in * factor, size_in) bilinear weights on cell centers."""
    size_out = size_in * factor
    coords = (np.arange(size_out) + 0.5) / factor - 0.5
    coords = np.clip(coords, 0.0, size_in - 1)
    low = np.floor(coords).astype(int)
    high = np.minimum(low + 1, size_in - 1)
    weight = coords - low
    matrix = np.zeros((size_out, size_in))
    rows = np.arange(size_out)
    np.add.at(matrix, (rows, low), 1.0 - weight)
    np.add.at(matrix, (rows, high), weight)
    return matrix


_UPSAMPLE_ROWS = _interpolation_matrix(POOLED_MAP_SHAPE[0], POOL_FACTOR)
_UPSAMPLE_COLS = _interpolation_matrix(POOLED_MAP_SHAPE[1], POOL_FACTOR)


def upsample(maps):
    """Bilinear upsampling of pooled maps back to full resolution.

    Uses the cell-center (align corners false) convention with border
    clamping, so constants are reproduced exactly.
    """
    maps = _check_shape(maps, POOLED_MAP_SHAPE, "Upsample")
    return np.einsum(
        "ij,...jk,lk->...il", _UPSAMPLE_ROWS, maps, _UPSAMPLE_COLS
    )


def process_raw(meas, ref):
    """Full signature pipeline.

    Returns:
        tuple[np.ndarray, np.ndarray]: Full resolution deformation maps and
            pooled maps.

    """
    full = deformation_map(crop_raw(meas), crop_raw(ref))
    return full, downsample(full)


def pixel_coordinates(shape=MAP_SHAPE, pitch=DEFAULT_PIXEL_PITCH):
    """Camera-plane (x, y) of pixel centers, origin at the image center."""
    height, width = shape
    xs = (np.arange(width) - 0.5 * (width - 1)) * pitch
    ys = (np.arange(height) - 0.5 * (height - 1)) * pitch
    return np.meshgrid(xs, ys, indexing="xy")


class CameraModel(object):
    """Orthographic membrane camera.

    Camera frame: x along image columns, y along image rows, z the viewing
    direction from the camera toward the membrane. The origin lies on the
    undeformed membrane surface at the image center.

    Args:
        extrinsic (PoseAA): Camera to grasp frame transform.
        pitch (float): Pixel pitch in meters.
        axis (Optional[Iterable[float]]): Viewing direction in the camera
            frame.

    """

    def __init__(self, extrinsic, pitch=DEFAULT_PIXEL_PITCH, axis=None):
        if pitch <= 0.0:
            raise ValueError("Pixel pitch must be positive")
        if axis is None:
            axis = (0.0, 0.0, 1.0)
        axis = np.asarray(axis, dtype=np.float64)
        self._extrinsic = extrinsic
        self._pitch = float(pitch)
        self._axis = axis / np.linalg.norm(axis)
        self._rotation = rotation_matrix(extrinsic.orientation)

    @property
    def extrinsic(self):
        return self._extrinsic

    @property
    def pitch(self):
        return self._pitch

    @property
    def axis(self):
        return self._axis.copy()

    def grasp_axis(self):
        """Viewing direction expressed in the grasp frame."""
        return self._rotation @ self._axis

    def project(self, deformation, mask=None):
        """Back-project one deformation map into the grasp frame.

        Args:
            deformation (np.ndarray): (H, W) map, positive toward camera.
            mask (Optional[np.ndarray]): Pixels to keep.

        Returns:
            tuple[np.ndarray, np.ndarray]: (N, 3) points and their
                deformation values.

        """
        deformation = np.asarray(deformation, dtype=np.float64)
        xs, ys = pixel_coordinates(deformation.shape, self._pitch)
        if mask is None:
            mask = np.ones(deformation.shape, dtype=bool)
        values = deformation[mask]
        points = np.zeros((len(values), 3))
        points[:, 0] = xs[mask]
        points[:, 1] = ys[mask]
        points -= values[:, None] * self._axis
        points = points @ self._rotation.T + self._extrinsic.position
        return points, values

    def to_data(self):
        return {
            "position": self._extrinsic.position.tolist(),
            "orientation": self._extrinsic.orientation.tolist(),
            "pitch": self._pitch,
            "axis": self._axis.tolist(),
        }

    @classmethod
    def from_data(cls, data):
        return cls(
            make_pose(data["position"], data["orientation"]),
            data.get("pitch", DEFAULT_PIXEL_PITCH),
            data.get("axis"),
        )


# Columns: camera x, y, z axes in the grasp frame
_LEFT_ROTATION = np.array([
    [0.0, 0.0, -1.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])
_RIGHT_ROTATION = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


def make_camera_pair(offset=DEFAULT_CAMERA_OFFSET, pitch=DEFAULT_PIXEL_PITCH):
    """Left (+x jaw) and right (-x jaw) cameras.

    The right image is mirrored in columns so a profile symmetric about the
    grasp plane renders identically on both membranes.

    Args:
        offset (float): Distance of undeformed membranes from grasp plane.
        pitch (float): Pixel pitch in meters.

    Returns:
        tuple[CameraModel, CameraModel]: Left and right camera.

    """
    left = CameraModel(
        make_pose((offset, 0.0, 0.0), matrix_to_rotvec(_LEFT_ROTATION)),
        pitch,
    )
    right = CameraModel(
        make_pose((-offset, 0.0, 0.0), matrix_to_rotvec(_RIGHT_ROTATION)),
        pitch,
    )
    return left, right


def depth_to_pointcloud(maps, cams, masks=None):
    """Project a deformation map pair into one grasp-frame point cloud.

    Args:
        maps (np.ndarray): (2, H, W) full resolution deformation maps.
        cams (tuple[CameraModel, CameraModel]): Left and right cameras.
        masks (Optional[np.ndarray]): (2, H, W) pixel selection.

    Returns:
        PointCloud: Points with per-point deformation values.

    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3 or maps.shape[0] != 2:
        raise ShapeError((2, ) + MAP_SHAPE, maps.shape)
    points = []
    values = []
    for index, cam in enumerate(cams):
        mask = None if masks is None else np.asarray(masks[index], dtype=bool)
        cam_points, cam_values = cam.project(maps[index], mask)
        points.append(cam_points)
        values.append(cam_values)
    return make_point_cloud(
        np.concatenate(points, axis=0),
        "grasp",
        np.concatenate(values),
    )
