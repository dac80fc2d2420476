"""Object pose from membrane geometry and wrench.

The observation pipeline picks the most deformed membrane pixels (the
imprint), aligns the held object model to them with point-to-point ICP in
the grasp plane and, when the wrench shows environment contact, slides the
estimate along the environment normal until the object touches the plane.
"""
import math
import logging
import collections

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .constants import (
    MAP_SHAPE,
    POOLED_MAP_SHAPE,
    IMPRINT_MIN_DEFORMATION,
    IMPRINT_TOP_FRACTION,
    IMPRINT_CLUSTER_DISTANCE,
    ICP_ITERATIONS,
    ICP_INIT_CONE,
    ICP_RESTARTS,
    ICP_MAX_DISTANCE,
    ICP_MIN_MODEL_POINTS,
    CONTACT_FORCE_THRESHOLD,
)
from .dataset import make_point_cloud
from .exceptions import (
    ConfigError,
    ShapeError,
    ObservationError,
    NoImprintError,
    DegenerateImprintError,
)
from .poses import (
    TaskState,
    make_pose,
    planar_pose,
    planar_components,
    pose_to_vector,
    wrench_to_vector,
    wrench_from_vector,
    rotation_matrix,
    rotation_2d,
    transform_points,
    wrap_angle,
)
from .processing import upsample, depth_to_pointcloud

# Imprint: 'points' is a grasp frame PointCloud, 'deformation' the per point
#   deformation in meters.
Imprint = collections.namedtuple("Imprint", ("points", "deformation"))
IcpResult = collections.namedtuple(
    "IcpResult", ("planar", "error", "history", "converged")
)

# Spread below which an imprint direction counts as missing, meters
_RANK_TOLERANCE = 1e-4
DEFAULT_MAX_POINTS = 400
# Later starts must lower the fit error below this share of the kept one
_RESTART_MARGIN = 0.9
# Model centroid offsets below this give a single start translation, meters
_CENTROID_TOLERANCE = 1e-4


class IcpConfig(object):
    """Alignment parameters.

    Args:
        iterations (int): Alignment iterations per start, always all
            performed.
        init_cone (float): Half-width of the random initial rotation around
            the principal axis estimate, radians.
        tolerance (float): Change of mean squared error, m^2, below which
            the fit is reported as converged.
        max_points (int): Model points used per fit, randomly subsampled.
        restarts (int): Start angles per fit. The first one is the
            principal axis estimate, the others are drawn in the cone.
        max_distance (float): Model points farther than this from their
            nearest imprint point are left out of the alignment step and
            count with this distance in the error, meters.
        seed (Optional[int]): Seed of a private generator, used when no
            generator is passed to the fit.

    """

    def __init__(
        self,
        iterations=ICP_ITERATIONS,
        init_cone=ICP_INIT_CONE,
        tolerance=1e-10,
        max_points=DEFAULT_MAX_POINTS,
        restarts=ICP_RESTARTS,
        max_distance=ICP_MAX_DISTANCE,
        seed=None,
    ):
        if iterations < 1:
            raise ConfigError("ICP needs at least one iteration")
        if init_cone < 0.0:
            raise ConfigError("ICP initialization cone must not be negative")
        if max_points < 3:
            raise ConfigError("ICP needs at least 3 model points")
        if restarts < 1:
            raise ConfigError("ICP needs at least one start")
        if max_distance <= 0.0:
            raise ConfigError("ICP correspondence distance must be positive")
        self.iterations = int(iterations)
        self.init_cone = float(init_cone)
        self.tolerance = float(tolerance)
        self.max_points = int(max_points)
        self.restarts = int(restarts)
        self.max_distance = float(max_distance)
        self.seed = seed

    def to_data(self):
        return {
            "iterations": self.iterations,
            "init_cone": self.init_cone,
            "tolerance": self.tolerance,
            "max_points": self.max_points,
            "restarts": self.restarts,
            "max_distance": self.max_distance,
            "seed": self.seed,
        }

    @classmethod
    def from_data(cls, data):
        known = set(cls().to_data().keys())
        return cls(**{
            key: value
            for key, value in (data or {}).items()
            if key in known
        })


class ContactConfig(object):
    """Contact detection threshold and environment plane in world frame."""

    def __init__(
        self,
        threshold=CONTACT_FORCE_THRESHOLD,
        env_point=(0.0, 0.0, 0.0),
        env_normal=(0.0, 0.0, 1.0),
    ):
        if threshold <= 0.0:
            raise ConfigError("Contact threshold must be positive")
        env_normal = np.asarray(env_normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(env_normal))
        if norm == 0.0:
            raise ConfigError("Environment normal must be non-zero")
        self.threshold = float(threshold)
        self.env_point = np.asarray(env_point, dtype=np.float64).reshape(3)
        self.env_normal = env_normal / norm

    def to_data(self):
        return {
            "threshold": self.threshold,
            "env_point": self.env_point.tolist(),
            "env_normal": self.env_normal.tolist(),
        }

    @classmethod
    def from_data(cls, data):
        known = set(cls().to_data().keys())
        return cls(**{
            key: value
            for key, value in (data or {}).items()
            if key in known
        })


# --- Imprint ---
def imprint_mask(
    maps,
    min_deformation=IMPRINT_MIN_DEFORMATION,
    top_fraction=IMPRINT_TOP_FRACTION,
):
    """Pixels among the top fraction of both membranes that deform enough.

    Pixels tied with the smallest kept value are all kept.
    """
    maps = np.asarray(maps, dtype=np.float64)
    values = maps.ravel()
    count = int(math.ceil(top_fraction * values.size))
    count = min(max(count, 1), values.size)
    threshold = np.partition(values, values.size - count)[
        values.size - count
    ]
    return (maps >= threshold) & (maps >= min_deformation)


def _blob_labels(mask):
    """Connected pixel regions of every membrane, numbered globally.

    Returns:
        tuple[np.ndarray, int]: Labels of kept pixels in membrane then row
            major order, and the number of regions.

    """
    labels = []
    offset = 0
    for membrane_mask in mask:
        membrane_labels, count = ndimage.label(membrane_mask)
        labels.append(membrane_labels[membrane_mask] - 1 + offset)
        offset += count
    return np.concatenate(labels), offset


def _cluster_blobs(points, labels, count, distance):
    """Components of regions closer than 'distance' in the grasp plane."""
    if count == 1:
        return np.zeros(1, dtype=int)
    trees = [cKDTree(points[labels == index]) for index in range(count)]
    rows = []
    cols = []
    for first in range(count):
        for second in range(first + 1, count):
            distances, _ = trees[first].query(
                points[labels == second],
                distance_upper_bound=distance,
            )
            if np.any(np.isfinite(distances)):
                rows.append(first)
                cols.append(second)
    adjacency = csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(count, count)
    )
    _, components = connected_components(adjacency, directed=False)
    return components


def extract_imprint(
    maps,
    cams,
    min_deformation=IMPRINT_MIN_DEFORMATION,
    top_fraction=IMPRINT_TOP_FRACTION,
    cluster_distance=IMPRINT_CLUSTER_DISTANCE,
):
    """Imprint of the held object on both membranes.

    Kept pixels are grouped into connected regions; regions whose points
    come within 'cluster_distance' of each other in the grasp plane form
    one cluster. The cluster with the largest total deformation is the
    imprint, everything else is discarded as outliers.

    Args:
        maps (np.ndarray): (2, 175, 140) full resolution deformation maps.
        cams (tuple[CameraModel, CameraModel]): Left and right camera.
        min_deformation (float): Minimum deformation of imprint pixels.
        top_fraction (float): Fraction of all pixels considered.
        cluster_distance (float): Region linkage distance in meters.

    Returns:
        Imprint: Imprint points in the grasp frame.

    Raises:
        ShapeError: Maps are not a full resolution pair.
        NoImprintError: No pixel passed the filters.

    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.shape != (2, ) + MAP_SHAPE:
        raise ShapeError((2, ) + MAP_SHAPE, maps.shape)
    mask = imprint_mask(maps, min_deformation, top_fraction)
    if not mask.any():
        raise NoImprintError()
    cloud = depth_to_pointcloud(maps, cams, mask)
    labels, count = _blob_labels(mask)
    planar = cloud.points[:, 1:]
    components = _cluster_blobs(planar, labels, count, cluster_distance)
    point_components = components[labels]
    totals = np.bincount(point_components, weights=cloud.values)
    keep = point_components == int(np.argmax(totals))
    return Imprint(
        make_point_cloud(cloud.points[keep], "grasp", cloud.values[keep]),
        cloud.values[keep],
    )


# --- Alignment ---
def kabsch_2d(source, target):
    """Rotation angle and translation mapping 'source' onto 'target'.

    Args:
        source (np.ndarray): (N, 2) points.
        target (np.ndarray): (N, 2) corresponding points.

    Returns:
        tuple[float, np.ndarray]: Angle and translation minimizing the
            summed squared distances.

    """
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    cross = (source - source_mean).T @ (target - target_mean)
    angle = math.atan2(
        cross[0, 1] - cross[1, 0], cross[0, 0] + cross[1, 1]
    )
    translation = target_mean - rotation_2d(angle) @ source_mean
    return angle, translation


def kabsch_3d(source, target):
    """Proper rotation and translation mapping 'source' onto 'target'.

    Returns:
        tuple[np.ndarray, np.ndarray]: 3x3 rotation and translation.

    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    source_mean = source.mean(axis=0)
    target_mean = target.mean(axis=0)
    cross = (source - source_mean).T @ (target - target_mean)
    u, _, vt = np.linalg.svd(cross)
    sign = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    correction = np.diag([1.0, 1.0, sign])
    rotation = vt.T @ correction @ u.T
    return rotation, target_mean - rotation @ source_mean


def spread_rank(points, tolerance=_RANK_TOLERANCE):
    """Number of directions with standard deviation above 'tolerance'."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0
    centered = points - points.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    return int(np.sum(singular / math.sqrt(len(points)) > tolerance))


def principal_angle(points):
    """Angle of the direction of largest spread of (N, 2) points."""
    centered = points - points.mean(axis=0)
    values, vectors = np.linalg.eigh(centered.T @ centered)
    axis = vectors[:, int(np.argmax(values))]
    return math.atan2(axis[1], axis[0])


def model_plane_points(object_model):
    """Unique (y, z) points of an object model."""
    points = np.asarray(object_model.points, dtype=np.float64)
    return np.unique(np.round(points[:, 1:], 12), axis=0)


def principal_axis_angle(imprint_points, model_points, prior):
    """Principal axis alignment, the half-turn ambiguity resolved by prior."""
    difference = principal_angle(imprint_points) - principal_angle(
        model_points
    )
    candidates = np.array([difference, difference + math.pi])
    distances = np.abs(wrap_angle(candidates - prior))
    return float(candidates[int(np.argmin(distances))])


def initial_angles(imprint_points, model_points, prior, cfg, rng):
    """Start angles of a fit, the principal axis estimate first.

    The remaining starts are drawn uniformly within the cone around it.
    """
    axis = principal_axis_angle(imprint_points, model_points, prior)
    angles = [axis]
    if cfg.init_cone > 0.0 and cfg.restarts > 1:
        offsets = rng.uniform(
            -cfg.init_cone, cfg.init_cone, cfg.restarts - 1
        )
        angles.extend(axis + offsets)
    return [float(wrap_angle(angle)) for angle in angles]


def initial_translations(imprint_points, model_points, angle):
    """Start translations of a fit for one start angle.

    The object origin on the imprint mean comes first. The model centroid
    on the imprint mean follows when the two starts differ.
    """
    imprint_mean = imprint_points.mean(axis=0)
    offset = rotation_2d(angle) @ model_points.mean(axis=0)
    starts = [imprint_mean]
    if float(np.linalg.norm(offset)) > _CENTROID_TOLERANCE:
        starts.append(imprint_mean - offset)
    return starts


def _fixed_cost(squared, used, gate):
    """Mean squared distance, pairs left out count with the gate."""
    return (
        float(np.sum(squared[used])) + gate * (len(used) - np.sum(used))
    ) / len(used)


def _icp_run(tree, imprint_points, model_points, angle, translation, cfg):
    """Iterations from one start.

    Returns:
        tuple: Best error, its angle and translation, the per iteration
            (before, after) errors and the convergence flag.

    """
    gate = cfg.max_distance ** 2

    def correspondences(angle, translation):
        moved = model_points @ rotation_2d(angle).T + translation
        distances, indices = tree.query(moved)
        squared = distances ** 2
        error = float(np.mean(np.minimum(squared, gate)))
        return error, squared, imprint_points[indices]

    best = None
    history = []
    converged = False
    for _ in range(cfg.iterations):
        error, squared, matched = correspondences(angle, translation)
        if best is None or error < best[0]:
            best = (error, angle, translation)
        used = squared <= gate
        if np.count_nonzero(used) < 3:
            used = np.ones(len(squared), dtype=bool)
        before = _fixed_cost(squared, used, gate)
        angle, translation = kabsch_2d(model_points[used], matched[used])
        moved = model_points @ rotation_2d(angle).T + translation
        after = _fixed_cost(
            np.sum((moved - matched) ** 2, axis=1), used, gate
        )
        history.append((before, after))
        converged = abs(before - after) < cfg.tolerance
    final, _, _ = correspondences(angle, translation)
    if final < best[0]:
        best = (final, angle, translation)
    return best + (tuple(history), converged)


def icp_align(imprint_points, model_points, cfg, rng, prior=0.0):
    """Planar point-to-point ICP.

    Every model point is matched to its nearest imprint point. Pairs
    farther apart than 'cfg.max_distance' are left out of the closed form
    alignment and count with that distance in the error, so a model larger
    than the imprint is still pulled onto it. Each iteration records the
    error with the current correspondences before and after the alignment.

    The fit starts from every pair of 'initial_angles' and
    'initial_translations'. A later start replaces the kept one only when
    it lowers the error clearly.

    Args:
        imprint_points (np.ndarray): (N, 2) grasp plane points.
        model_points (np.ndarray): (M, 2) object frame points.
        cfg (IcpConfig): Alignment config.
        rng (np.random.Generator): Subsampling and initialization noise.
        prior (float): Expected in-hand angle.

    Returns:
        IcpResult: Best iterate (y, z, theta), its error and the per
            iteration (before, after) errors of the kept start.

    Raises:
        DegenerateImprintError: Imprint or model does not span the plane.

    """
    model_points = np.asarray(model_points, dtype=np.float64)
    if len(model_points) < ICP_MIN_MODEL_POINTS:
        raise DegenerateImprintError(
            spread_rank(model_points),
            "Object model has {} distinct points, at least {} needed".format(
                len(model_points), ICP_MIN_MODEL_POINTS
            )
        )
    imprint_points = np.asarray(imprint_points, dtype=np.float64)
    rank = spread_rank(imprint_points)
    if rank < 2:
        raise DegenerateImprintError(rank)
    sampled = model_points
    if len(model_points) > cfg.max_points:
        chosen = rng.choice(len(model_points), cfg.max_points, replace=False)
        sampled = model_points[np.sort(chosen)]

    tree = cKDTree(imprint_points)
    best = None
    angles = initial_angles(imprint_points, model_points, prior, cfg, rng)
    for angle in angles:
        starts = initial_translations(imprint_points, model_points, angle)
        for translation in starts:
            run = _icp_run(
                tree, imprint_points, sampled, angle, translation, cfg
            )
            if best is None or run[0] < _RESTART_MARGIN * best[0]:
                best = run
    error, angle, translation, history, converged = best
    planar = np.array(
        [translation[0], translation[1], float(wrap_angle(angle))]
    )
    return IcpResult(planar, error, history, converged)


def icp_fit(imprint, object_model, cfg, rng, prior=0.0):
    """Grasp frame object pose aligning the model to the imprint.

    Returns:
        PoseAA: Planar pose, out-of-plane components at zero.

    """
    result = icp_align(
        imprint.points.points[:, 1:],
        model_plane_points(object_model),
        cfg,
        rng,
        prior,
    )
    return planar_pose(*result.planar)


# --- Contact ---
def plane_in_grasp(env_point, env_normal, r=None):
    """Environment plane expressed in the grasp frame of pose vector 'r'."""
    env_point = np.asarray(env_point, dtype=np.float64).reshape(3)
    env_normal = np.asarray(env_normal, dtype=np.float64).reshape(3)
    if r is None:
        return env_point, env_normal
    r = np.asarray(r, dtype=np.float64).reshape(6)
    rotation = rotation_matrix(r[3:])
    return rotation.T @ (env_point - r[:3]), rotation.T @ env_normal


def detect_contact(w, env_normal, threshold=CONTACT_FORCE_THRESHOLD):
    """Whether the force along the environment normal exceeds 'threshold'.

    Args:
        w (Union[Wrench6, np.ndarray]): Wrench in the same frame as the
            normal.
        env_normal (np.ndarray): Unit environment normal.
        threshold (float): Force magnitude in newtons.

    """
    if not isinstance(w, np.ndarray):
        w = wrench_to_vector(w)
    force = np.asarray(w, dtype=np.float64).reshape(6)[:3]
    normal = np.asarray(env_normal, dtype=np.float64).reshape(3)
    return bool(abs(float(force @ normal)) > threshold)


def project_to_contact_manifold(q, object_model, env_point, env_normal):
    """Translate the pose along the plane normal until the object touches.

    Args:
        q (PoseAA): Object pose, same frame as the plane.
        object_model (ObjectModel): Object geometry.
        env_point (np.ndarray): Point on the environment plane.
        env_normal (np.ndarray): Unit plane normal toward the free side.

    Returns:
        PoseAA: Pose with the lowest model point on the plane.

    """
    env_normal = np.asarray(env_normal, dtype=np.float64).reshape(3)
    points = transform_points(q, object_model.points)
    distances = (points - np.asarray(env_point)) @ env_normal
    lowest = float(np.min(distances))
    return make_pose(q.position - lowest * env_normal, q.orientation)


class ObservationModel(object):
    """Membrane state to object pose.

    Args:
        cams (tuple[CameraModel, CameraModel]): Left and right camera.
        icp_cfg (Optional[IcpConfig]): Alignment config.
        contact_cfg (Optional[ContactConfig]): Contact config.
        rng (Optional[np.random.Generator]): Alignment randomness, created
            from 'icp_cfg.seed' when not passed.

    """

    def __init__(self, cams, icp_cfg=None, contact_cfg=None, rng=None):
        if icp_cfg is None:
            icp_cfg = IcpConfig()
        if contact_cfg is None:
            contact_cfg = ContactConfig()
        if rng is None:
            rng = np.random.default_rng(icp_cfg.seed)
        self._cams = cams
        self._icp_cfg = icp_cfg
        self._contact_cfg = contact_cfg
        self._rng = rng
        self._log = None

    @property
    def log(self):
        if self._log is None:
            self._log = logging.getLogger(self.__class__.__name__)
        return self._log

    @property
    def icp_config(self):
        return self._icp_cfg

    @property
    def contact_config(self):
        return self._contact_cfg

    def in_contact(self, w, r):
        _, normal = plane_in_grasp(
            self._contact_cfg.env_point, self._contact_cfg.env_normal, r
        )
        return detect_contact(w, normal, self._contact_cfg.threshold)

    def observe_maps(self, maps, w, r, object_model, prior=0.0):
        """Grasp frame object pose vector from full resolution maps.

        Args:
            maps (np.ndarray): (2, 175, 140) deformation maps.
            w (np.ndarray): Wrench vector, grasp frame.
            r (np.ndarray): World grasp pose vector.
            object_model (ObjectModel): Held object.
            prior (float): Expected in-hand angle.

        Returns:
            np.ndarray: Packed pose vector.

        Raises:
            ObservationError: No usable imprint.

        """
        imprint = extract_imprint(maps, self._cams)
        q = icp_fit(imprint, object_model, self._icp_cfg, self._rng, prior)
        if self.in_contact(w, r):
            point, normal = plane_in_grasp(
                self._contact_cfg.env_point, self._contact_cfg.env_normal, r
            )
            q = project_to_contact_manifold(q, object_model, point, normal)
        return pose_to_vector(q)

    def observe(self, membrane, object_model, prior=None):
        """Task state of one membrane state.

        Pooled maps are upsampled to full resolution first.

        Args:
            membrane (MembraneState): Observed state.
            object_model (ObjectModel): Held object.
            prior (Optional[PoseAA]): Previous estimate resolving the half
                turn ambiguity of the imprint axis.

        Returns:
            TaskState: Object pose and wrench, grasp frame.

        """
        maps = np.asarray(membrane.p, dtype=np.float64)
        if maps.shape[-2:] == POOLED_MAP_SHAPE:
            maps = upsample(maps)
        prior_angle = 0.0
        if prior is not None:
            prior_angle = planar_components(prior)[2]
        try:
            q = self.observe_maps(
                maps, membrane.w, membrane.r, object_model, prior_angle
            )
        except ObservationError as exc:
            self.log.warning("Observation of \"{}\" failed: {}".format(
                object_model.name, exc
            ))
            raise
        return TaskState(
            make_pose(q[:3], q[3:]), wrench_from_vector(membrane.w)
        )

    def observe_batch(self, membranes, object_model, prior=None):
        """Task states of several membrane states, in input order."""
        return [
            self.observe(membrane, object_model, prior)
            for membrane in membranes
        ]
