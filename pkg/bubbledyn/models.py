"""Learned tactile models and the stepping interface shared with baselines.

Maps enter the networks in millimeters ('TACTILE_SCALE'); every numpy
facing helper takes and returns meters.
"""
import os
import logging

import numpy as np

from .autograd import (
    Module,
    Linear,
    Conv2d,
    ConvTranspose2d,
    BatchNorm,
    ReLU,
    Flatten,
    Unflatten,
    Sequential,
    Tensor,
    as_tensor,
    concat,
    max_over,
    reshape,
    evaluating,
)
from .constants import (
    POOLED_MAP_SHAPE,
    TACTILE_SCALE,
    TACTILE_EMBEDDING_SIZE,
    OBJECT_EMBEDDING_SIZE,
    WRENCH_SIZE,
    POSE_SIZE,
    ACTION_SIZE,
    DYNAMICS_HIDDEN_SIZE,
    OBJECT_MIN_POINTS,
    PRIMITIVE_FAMILIES,
    MANIFEST_NAME,
    MODEL_MEMBRANE,
)
from .exceptions import ShapeError
from .poses import robot_action_vectors
from .tensor_io import write_array, read_array
from .utils import write_json, read_json, directory_lock

# Object clouds are scaled so a 5 cm tool spans about one unit
OBJECT_POINT_SCALE = 20.0
ENCODER_CHANNELS = (8, 16, 32)
KERNEL_SIZE = 5
# Spatial size after the three valid encoder convolutions
BOTTLENECK_SHAPE = (32, 13, 8)
DYNAMICS_INPUT_SIZE = (
    TACTILE_EMBEDDING_SIZE + WRENCH_SIZE + POSE_SIZE
    + OBJECT_EMBEDDING_SIZE + ACTION_SIZE
)
_SCALE_FLOOR = 1e-6


def check_maps(maps):
    """Pooled maps as a (N, 2, 25, 20) batch and whether input was single."""
    maps = np.asarray(maps)
    expected = (2, ) + POOLED_MAP_SHAPE
    if maps.shape == expected:
        return maps[None], True
    if maps.ndim != 4 or maps.shape[1:] != expected:
        raise ShapeError(expected, maps.shape)
    return maps, False


def _check_vectors(values, size, name):
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[None]
    if values.ndim != 2 or values.shape[1] != size:
        raise ShapeError(
            (size, ),
            values.shape,
            "Input '{}' expects {} values got shape {}".format(
                name, size, values.shape
            ),
        )
    return values


class TactileAutoencoder(Module):
    """Embeds a 2x25x20 pooled map pair into a 15 vector and back.

    Three valid 5x5 convolutions shrink the maps to 21x16, 17x12 and
    13x8. The decoder undoes the last step with a transposed convolution
    to 17x12, then a transposed convolution with dilation 2 reaches 25x20
    in one step, so its chain is 13x8 -> 17x12 -> 25x20.

    Args:
        seed (int): Weight initialization seed.

    """

    def __init__(self, seed=0):
        super(TactileAutoencoder, self).__init__()
        rng = np.random.default_rng(seed)
        c1, c2, c3 = ENCODER_CHANNELS
        flat = int(np.prod(BOTTLENECK_SHAPE))
        self.encoder = Sequential(
            Conv2d(2, c1, KERNEL_SIZE, rng), BatchNorm(c1), ReLU(),
            Conv2d(c1, c2, KERNEL_SIZE, rng), BatchNorm(c2), ReLU(),
            Conv2d(c2, c3, KERNEL_SIZE, rng), BatchNorm(c3), ReLU(),
            Flatten(),
            Linear(flat, TACTILE_EMBEDDING_SIZE, rng),
        )
        # 13x8 -> 17x12 -> (dilated kernel spans 9) 25x20
        self.decoder = Sequential(
            Linear(TACTILE_EMBEDDING_SIZE, flat, rng), BatchNorm(flat), ReLU(),
            Unflatten(BOTTLENECK_SHAPE),
            ConvTranspose2d(c3, c2, KERNEL_SIZE, rng), BatchNorm(c2), ReLU(),
            ConvTranspose2d(c2, 2, KERNEL_SIZE, rng, dilation=2),
        )

    def encode(self, maps):
        return self.encoder(maps)

    def decode(self, embeddings):
        return self.decoder(embeddings)

    def forward(self, maps):
        return self.decode(self.encode(maps))

    def encode_tactile(self, maps):
        """Embedding of pooled maps in meters.

        Args:
            maps (np.ndarray): (2, 25, 20) or (N, 2, 25, 20) maps.

        Returns:
            np.ndarray: (15, ) or (N, 15) embeddings.

        Raises:
            ShapeError: Maps have a different shape.

        """
        batch, single = check_maps(maps)
        dtype = self.decoder.layer0.weight.dtype
        with evaluating(self):
            output = self.encode(Tensor(
                (batch * TACTILE_SCALE).astype(dtype)
            )).data
        return output[0] if single else output

    def decode_tactile(self, embeddings):
        """Pooled maps in meters decoded from embeddings."""
        embeddings = np.asarray(embeddings)
        single = embeddings.ndim == 1
        embeddings = _check_vectors(
            embeddings, TACTILE_EMBEDDING_SIZE, "embedding"
        )
        dtype = self.decoder.layer0.weight.dtype
        with evaluating(self):
            output = self.decode(Tensor(embeddings.astype(dtype))).data
        output = output / TACTILE_SCALE
        return output[0] if single else output


def prepare_cloud(cloud):
    """Scaled (M, 3) float32 points, tiled up to the minimum point count.

    Args:
        cloud (Union[PointCloud, ObjectModel, np.ndarray]): Points.

    Raises:
        ShapeError: Cloud is empty.

    """
    points = getattr(cloud, "points", cloud)
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ShapeError(None, points.shape, "Object cloud is empty")
    points = points.reshape(-1, 3)
    if len(points) < OBJECT_MIN_POINTS:
        points = np.resize(points, (OBJECT_MIN_POINTS, 3))
    return (points * OBJECT_POINT_SCALE).astype(np.float32)


class ObjectEncoder(Module):
    """Point cloud encoder: shared per-point layers and max-pool.

    'classifier' is only used while pretraining on primitive families.
    """

    def __init__(self, seed=0):
        super(ObjectEncoder, self).__init__()
        rng = np.random.default_rng(seed)
        self.point_mlp = Sequential(
            Linear(3, 64, rng, rowwise=True), ReLU(),
            Linear(64, 128, rng, rowwise=True), ReLU(),
        )
        self.fc = Sequential(Linear(128, 64, rng), ReLU())
        self.head = Linear(64, OBJECT_EMBEDDING_SIZE, rng)
        self.classifier = Linear(
            OBJECT_EMBEDDING_SIZE, len(PRIMITIVE_FAMILIES), rng
        )

    def pooled(self, clouds):
        """Max-pooled point features (B, 128) of prepared clouds."""
        sizes = {len(cloud) for cloud in clouds}
        if len(sizes) == 1:
            count = sizes.pop()
            stacked = np.concatenate(clouds, axis=0)
            features = self.point_mlp(Tensor(stacked))
            features = reshape(features, (len(clouds), count, -1))
            return max_over(features, 1)
        return concat([
            reshape(max_over(self.point_mlp(Tensor(cloud)), 0), (1, -1))
            for cloud in clouds
        ], axis=0)

    def features(self, clouds):
        return self.fc(self.pooled(clouds))

    def forward(self, clouds):
        return self.head(self.features(clouds))

    def classify(self, clouds):
        return self.classifier(self.forward(clouds))

    def feature_vectors(self, clouds):
        """Frozen 64-dim features of raw clouds, evaluation mode."""
        prepared = [prepare_cloud(cloud) for cloud in clouds]
        with evaluating(self):
            return self.features(prepared).data

    def encode_object(self, cloud):
        """10-dim embedding, invariant to point order and duplicates."""
        with evaluating(self):
            return self.forward([prepare_cloud(cloud)]).data[0]

    def freeze_features(self):
        """Keep only the final embedding layer trainable."""
        self.set_trainable(False)
        self.head.set_trainable(True)


class MembraneDynamicsNet(Module):
    """One-step dynamics in tactile embedding space.

    Inputs are divided by per-feature scales; outputs are residual
    corrections multiplied by per-feature scales. The pose output is a
    correction added to the robot action model prediction.
    """

    _buffers = ("input_scale", "output_scale")

    def __init__(self, seed=0):
        super(MembraneDynamicsNet, self).__init__()
        rng = np.random.default_rng(seed)
        hidden = DYNAMICS_HIDDEN_SIZE
        self.hidden = Sequential(
            Linear(DYNAMICS_INPUT_SIZE, hidden, rng), ReLU(),
            Linear(hidden, hidden, rng), ReLU(),
        )
        self.tactile_head = Linear(hidden, TACTILE_EMBEDDING_SIZE, rng)
        self.wrench_head = Linear(hidden, WRENCH_SIZE, rng)
        self.pose_head = Linear(hidden, POSE_SIZE, rng)
        self.input_scale = np.ones(DYNAMICS_INPUT_SIZE, dtype=np.float32)
        self.output_scale = np.ones(
            TACTILE_EMBEDDING_SIZE + WRENCH_SIZE + POSE_SIZE,
            dtype=np.float32,
        )

    def set_scaling(self, inputs, deltas):
        """Scales from training inputs (N, 41) and target deltas (N, 27)."""
        self.input_scale = _std_scale(inputs).astype(self.input_scale.dtype)
        self.output_scale = _std_scale(deltas).astype(
            self.output_scale.dtype
        )

    def forward(self, p_emb, w, r, z_emb, a):
        dtype = self.pose_head.weight.dtype
        p_emb = as_tensor(p_emb, dtype)
        w = as_tensor(w, dtype)
        x = concat([
            p_emb, w, as_tensor(r, dtype), as_tensor(z_emb, dtype),
            as_tensor(a, dtype),
        ], axis=1)
        h = self.hidden(x * (1.0 / self.input_scale))
        t_end = TACTILE_EMBEDDING_SIZE
        w_end = t_end + WRENCH_SIZE
        scale = self.output_scale
        p_next = p_emb + self.tactile_head(h) * scale[:t_end]
        w_next = w + self.wrench_head(h) * scale[t_end:w_end]
        delta_r = self.pose_head(h) * scale[w_end:]
        return p_next, w_next, delta_r


def _std_scale(values):
    values = np.asarray(values, dtype=np.float64)
    std = values.std(axis=0)
    return np.where(std > _SCALE_FLOOR, std, 1.0)


def dynamics_forward(net, p_emb, w, r, z_emb, a):
    """Numpy inference of a dynamics network.

    Args:
        net (Module): Network returning (p_emb', w', delta_r or None).
        p_emb (np.ndarray): (15, ) or (N, 15) tactile embeddings.
        w (np.ndarray): Wrench vectors.
        r (np.ndarray): Grasp pose vectors.
        z_emb (np.ndarray): Object embeddings.
        a (np.ndarray): Actions.

    Returns:
        tuple[np.ndarray, np.ndarray, np.ndarray]: Next embedding, next
            wrench and next grasp pose, the latter being the robot action
            model prediction plus the predicted correction.

    Raises:
        ShapeError: Input dimensions do not match.

    """
    single = np.asarray(p_emb).ndim == 1
    p_emb = _check_vectors(p_emb, TACTILE_EMBEDDING_SIZE, "p_emb")
    w = _check_vectors(w, WRENCH_SIZE, "w")
    r = _check_vectors(r, POSE_SIZE, "r")
    z_emb = _check_vectors(z_emb, OBJECT_EMBEDDING_SIZE, "z_emb")
    a = _check_vectors(a, ACTION_SIZE, "a")
    count = len(p_emb)
    if len(z_emb) == 1 and count > 1:
        z_emb = np.repeat(z_emb, count, axis=0)
    with evaluating(net):
        p_next, w_next, delta_r = net(p_emb, w, r, z_emb, a)
    r_next = robot_action_vectors(r, a)
    if delta_r is not None:
        r_next = r_next + delta_r.data
    output = (p_next.data, w_next.data, r_next)
    if single:
        return tuple(value[0] for value in output)
    return output


class StepModel(object):
    """Dynamics model interface used by the controller.

    A model advances a batch of latent states; a latent state is a dict of
    arrays with a leading batch axis: 'p' (pooled maps or tactile
    embedding), 'w' wrench, 'r' grasp pose and optionally 'q' object pose.
    Membrane-space models expose predicted maps through 'maps', models
    tracking the object pose expose it through 'object_poses'.
    """

    kind = None
    tracks_object_pose = False

    def object_embedding(self, object_model):
        return None

    def initial(self, membrane, q=None):
        raise NotImplementedError

    def step(self, latent, z_emb, actions):
        raise NotImplementedError

    def maps(self, latent):
        return None

    def object_poses(self, latent):
        return None


def repeat_latent(latent, count):
    return {
        key: np.repeat(value, count, axis=0) for key, value in latent.items()
    }


class LatentModel(StepModel):
    """Step model rolling out in tactile embedding space.

    Args:
        autoencoder (TactileAutoencoder): Frozen tactile embedding.
        object_encoder (ObjectEncoder): Object embedding.
        net (Module): Dynamics network.
        kind (str): Model kind name.

    """

    def __init__(self, autoencoder, object_encoder, net, kind=MODEL_MEMBRANE):
        self.autoencoder = autoencoder
        self.object_encoder = object_encoder
        self.net = net
        self.kind = kind
        self._embeddings = {}

    def object_embedding(self, object_model):
        key = object_model.name
        if key not in self._embeddings:
            self._embeddings[key] = self.object_encoder.encode_object(
                object_model
            )
        return self._embeddings[key]

    def initial(self, membrane, q=None):
        return {
            "p": self.autoencoder.encode_tactile(membrane.p)[None],
            "w": np.asarray(membrane.w, dtype=np.float64)[None],
            "r": np.asarray(membrane.r, dtype=np.float64)[None],
        }

    def step(self, latent, z_emb, actions):
        p_next, w_next, r_next = dynamics_forward(
            self.net, latent["p"], latent["w"], latent["r"], z_emb, actions
        )
        return {"p": p_next, "w": w_next, "r": r_next}

    def maps(self, latent):
        return self.autoencoder.decode_tactile(latent["p"])


# --- Checkpoints ---
def save_checkpoint(dirpath, modules, kind, metadata=None):
    """Store module weights as one tensor file per array plus manifest.

    Args:
        dirpath (str): Checkpoint directory.
        modules (dict[str, Module]): Modules by name.
        kind (str): Model kind recorded in the manifest.
        metadata (Optional[dict[str, Any]]): Training config and report.

    Returns:
        str: Path to the manifest.

    """
    log = logging.getLogger("checkpoint")
    with directory_lock(dirpath):
        layers = []
        for module_name, module in modules.items():
            for name, value in sorted(module.state_dict().items()):
                filename = "{}.{}.btns".format(module_name, name)
                write_array(os.path.join(dirpath, filename), value)
                layers.append({
                    "module": module_name,
                    "name": name,
                    "filename": filename,
                    "dims": list(np.shape(value)),
                })
        manifest = {
            "kind": kind,
            "modules": sorted(modules.keys()),
            "layers": layers,
            "metadata": metadata or {},
        }
        manifest_path = os.path.join(dirpath, MANIFEST_NAME)
        write_json(manifest_path, manifest)
    log.info("Stored \"{}\" checkpoint to \"{}\"".format(kind, dirpath))
    return manifest_path


def read_checkpoint_manifest(dirpath):
    manifest_path = os.path.join(dirpath, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(
            "Checkpoint manifest \"{}\" does not exist".format(manifest_path)
        )
    return read_json(manifest_path)


def load_checkpoint(dirpath, modules):
    """Load weights stored by 'save_checkpoint' into 'modules'.

    Returns:
        dict[str, Any]: Checkpoint manifest.

    """
    manifest = read_checkpoint_manifest(dirpath)
    states = {}
    for layer in manifest["layers"]:
        states.setdefault(layer["module"], {})[layer["name"]] = read_array(
            os.path.join(dirpath, layer["filename"])
        )
    for module_name, module in modules.items():
        if module_name not in states:
            raise KeyError(
                "Checkpoint \"{}\" has no module \"{}\"".format(
                    dirpath, module_name
                )
            )
        module.load_state_dict(states[module_name])
    return manifest
