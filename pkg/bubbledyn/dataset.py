"""Transition datasets stored as a directory of tensor files.

Directory layout:

    manifest.json
    <field>.<shard>.btns      one tensor file per field per shard
    object.<index>.btns       point cloud of every object

Manifest keys: 'task', 'objects' (list), 'n_transitions', 'fields'
(field name -> list of {'filename', 'dims'} per shard) and 'units'.
"""
import os
import logging
import collections

import numpy as np

from .constants import MANIFEST_NAME
from .exceptions import ShapeError
from .poses import MembraneState
from .tensor_io import tensor_write, tensor_read
from .utils import write_json, read_json, directory_lock

PointCloud = collections.namedtuple(
    "PointCloud", ("points", "frame", "values")
)
ObjectModel = collections.namedtuple(
    "ObjectModel", ("name", "points", "tip", "extent")
)
Transition = collections.namedtuple(
    "Transition", ("s_t", "z_id", "a_t", "s_next")
)

SHARD_SIZE = 1000
STATE_FIELDS = ("p_t", "w_t", "r_t", "p_next", "w_next", "r_next")
BASE_FIELDS = STATE_FIELDS + ("z_id", "a_t")
# Simulator ground truth kept next to the learned-model inputs; the true
#   object pose is planar (y, z, theta) in the grasp frame, the observed one
#   a packed pose vector from the observation model, NaN when it failed.
EXTRA_FIELDS = (
    "q_true_t", "q_true_next", "q_obs_t", "q_obs_next", "episode"
)
EXTRA_FIELD_SIZES = {
    "q_true_t": 3,
    "q_true_next": 3,
    "q_obs_t": 6,
    "q_obs_next": 6,
    "episode": None,
}
FIELD_UNITS = {
    "p_t": "m",
    "p_next": "m",
    "w_t": "N, N*m",
    "w_next": "N, N*m",
    "r_t": "m, rad",
    "r_next": "m, rad",
    "a_t": "m, m, m, rad",
    "z_id": "index",
    "q_true_t": "m, m, rad",
    "q_true_next": "m, m, rad",
    "q_obs_t": "m, rad",
    "q_obs_next": "m, rad",
    "episode": "index",
}


def _missing_extra(key):
    size = EXTRA_FIELD_SIZES[key]
    if size is None:
        return np.float32(np.nan)
    return np.full(size, np.nan, dtype=np.float32)


def make_point_cloud(points, frame="grasp", values=None):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 1:
        raise ShapeError(None, points.shape, "Point cloud needs a point")
    if not np.all(np.isfinite(points)):
        raise ValueError("Point cloud contains non-finite values")
    if values is not None:
        values = np.asarray(values, dtype=np.float64).reshape(len(points))
    return PointCloud(points, frame, values)


class Dataset(object):
    """Columnar collection of transitions for one task.

    Args:
        task (str): Task name the transitions were collected for.
        objects (Optional[list[ObjectModel]]): Object models referenced by
            'z_id' of transitions.

    """

    def __init__(self, task, objects=None):
        self._task = task
        self._objects = list(objects or [])
        self._columns = collections.defaultdict(list)
        self._arrays = None
        self._log = None

    @property
    def log(self):
        if self._log is None:
            self._log = logging.getLogger(self.__class__.__name__)
        return self._log

    @property
    def task(self):
        return self._task

    @property
    def objects(self):
        return list(self._objects)

    def object_index(self, name):
        for index, obj in enumerate(self._objects):
            if obj.name == name:
                return index
        raise KeyError("Object \"{}\" is not in dataset".format(name))

    def add_object(self, object_model):
        """Register object and return its id used in transitions."""
        for index, obj in enumerate(self._objects):
            if obj.name == object_model.name:
                return index
        self._objects.append(object_model)
        return len(self._objects) - 1

    def add(self, transition, extras=None):
        """Append transition.

        Args:
            transition (Transition): Transition sample.
            extras (Optional[dict[str, Any]]): Values for 'EXTRA_FIELDS'.

        """
        if not (0 <= transition.z_id < len(self._objects)):
            raise ValueError("Unknown object id {}".format(transition.z_id))
        columns = self._columns
        columns["p_t"].append(np.asarray(transition.s_t.p, dtype=np.float32))
        columns["w_t"].append(np.asarray(transition.s_t.w, dtype=np.float32))
        columns["r_t"].append(np.asarray(transition.s_t.r, dtype=np.float32))
        columns["p_next"].append(
            np.asarray(transition.s_next.p, dtype=np.float32))
        columns["w_next"].append(
            np.asarray(transition.s_next.w, dtype=np.float32))
        columns["r_next"].append(
            np.asarray(transition.s_next.r, dtype=np.float32))
        columns["z_id"].append(np.float32(transition.z_id))
        columns["a_t"].append(
            np.asarray(transition.a_t, dtype=np.float32).reshape(4))
        extras = extras or {}
        for key in EXTRA_FIELDS:
            value = extras.get(key)
            if value is None:
                value = _missing_extra(key)
            columns[key].append(np.asarray(value, dtype=np.float32))
        self._arrays = None

    def extend(self, other):
        """Append all transitions of another dataset, remapping object ids."""
        mapping = {}
        for index, obj in enumerate(other.objects):
            mapping[index] = self.add_object(obj)
        arrays = other.arrays()
        for key in BASE_FIELDS + EXTRA_FIELDS:
            values = arrays[key]
            if key == "z_id":
                values = np.array(
                    [mapping[int(value)] for value in values],
                    dtype=np.float32,
                )
            self._columns[key].extend(list(values))
        self._arrays = None

    def __len__(self):
        return len(self._columns["z_id"])

    def arrays(self):
        """Stacked float32 arrays of all fields.

        Returns:
            dict[str, np.ndarray]: Arrays by field name.

        """
        if self._arrays is None:
            self._arrays = {
                key: (
                    np.stack(self._columns[key]).astype(np.float32)
                    if self._columns[key]
                    else np.zeros((0, ), dtype=np.float32)
                )
                for key in BASE_FIELDS + EXTRA_FIELDS
            }
        return self._arrays

    def transition(self, index):
        arrays = self.arrays()
        return Transition(
            MembraneState(
                arrays["p_t"][index], arrays["w_t"][index],
                arrays["r_t"][index]
            ),
            int(arrays["z_id"][index]),
            arrays["a_t"][index],
            MembraneState(
                arrays["p_next"][index], arrays["w_next"][index],
                arrays["r_next"][index]
            ),
        )

    def __iter__(self):
        for index in range(len(self)):
            yield self.transition(index)

    def subset(self, indices):
        """New dataset holding selected transitions, objects shared."""
        output = Dataset(self._task, self._objects)
        arrays = self.arrays()
        for key in BASE_FIELDS + EXTRA_FIELDS:
            output._columns[key] = list(arrays[key][np.asarray(indices)])
        return output

    def split(self, validation_fraction, rng):
        """Random train/validation split.

        Args:
            validation_fraction (float): Share of samples in validation set.
            rng (np.random.Generator): Generator for the permutation.

        Returns:
            tuple[np.ndarray, np.ndarray]: Train and validation indices.

        """
        if not 0.0 < validation_fraction < 1.0:
            raise ValueError("Validation fraction must be in (0, 1)")
        order = rng.permutation(len(self))
        n_val = max(1, int(round(len(self) * validation_fraction)))
        if n_val >= len(self):
            n_val = len(self) - 1
        return np.sort(order[n_val:]), np.sort(order[:n_val])

    def save(self, dirpath, extra_manifest=None):
        """Store dataset into directory.

        Args:
            dirpath (str): Output directory. Created when missing.
            extra_manifest (Optional[dict[str, Any]]): Additional manifest
                keys (e.g. collection config).

        Returns:
            str: Path to written manifest.

        """
        arrays = self.arrays()
        n_items = len(self)
        with directory_lock(dirpath):
            fields = {}
            for key in BASE_FIELDS + EXTRA_FIELDS:
                shards = []
                for shard, start in enumerate(range(0, n_items, SHARD_SIZE)):
                    chunk = arrays[key][start:start + SHARD_SIZE]
                    filename = "{}.{:05d}.btns".format(key, shard)
                    tensor_write(
                        os.path.join(dirpath, filename), chunk.shape, chunk
                    )
                    shards.append({
                        "filename": filename,
                        "dims": list(chunk.shape),
                    })
                fields[key] = shards

            objects = []
            for index, obj in enumerate(self._objects):
                filename = "object.{:03d}.btns".format(index)
                points = np.asarray(obj.points, dtype=np.float32)
                tensor_write(
                    os.path.join(dirpath, filename), points.shape, points
                )
                objects.append({
                    "name": obj.name,
                    "filename": filename,
                    "tip": [float(value) for value in obj.tip],
                    "extent": [float(value) for value in obj.extent],
                })

            manifest = {
                "task": self._task,
                "objects": objects,
                "n_transitions": n_items,
                "fields": fields,
                "units": dict(FIELD_UNITS),
            }
            if extra_manifest:
                manifest.update(extra_manifest)
            manifest_path = os.path.join(dirpath, MANIFEST_NAME)
            write_json(manifest_path, manifest)
        self.log.info("Stored {} transitions to \"{}\"".format(
            n_items, dirpath
        ))
        return manifest_path

    @classmethod
    def load(cls, dirpath):
        """Load dataset stored with 'save'.

        Raises:
            FileNotFoundError: Manifest is missing.

        """
        manifest_path = os.path.join(dirpath, MANIFEST_NAME)
        if not os.path.exists(manifest_path):
            raise FileNotFoundError(
                "Dataset manifest \"{}\" does not exist".format(manifest_path)
            )
        manifest = read_json(manifest_path)
        objects = []
        for item in manifest["objects"]:
            _, points = tensor_read(os.path.join(dirpath, item["filename"]))
            objects.append(ObjectModel(
                item["name"],
                points.astype(np.float64),
                np.asarray(item["tip"], dtype=np.float64),
                np.asarray(item["extent"], dtype=np.float64),
            ))
        dataset = cls(manifest["task"], objects)
        for key, shards in manifest["fields"].items():
            for shard in shards:
                _, values = tensor_read(
                    os.path.join(dirpath, shard["filename"])
                )
                dataset._columns[key].extend(list(values))
        if len(dataset) != manifest["n_transitions"]:
            raise ValueError(
                "Manifest reports {} transitions but {} are stored".format(
                    manifest["n_transitions"], len(dataset)
                )
            )
        for key in EXTRA_FIELDS:
            if key not in manifest["fields"]:
                dataset._columns[key] = [
                    _missing_extra(key) for _ in range(len(dataset))
                ]
        return dataset


def merge_datasets(datasets, task=None):
    """Combine datasets, e.g. for a tactile embedding shared by tasks."""
    if not datasets:
        raise ValueError("Nothing to merge")
    if task is None:
        tasks = sorted({dataset.task for dataset in datasets})
        task = "+".join(tasks)
    output = Dataset(task)
    for dataset in datasets:
        output.extend(dataset)
    return output
