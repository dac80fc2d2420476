"""Comparison dynamics models and the pseudo-random policy.

Every model implements 'StepModel' so the controller treats them alike:

- 'LatentModel' with 'LinearDynamics' - one matrix in embedding space.
- 'ObjectPoseModel' - a network stepping object poses instead of maps.
- 'FixedModel' - membrane state frozen, only the grasp moves.
- 'JacobianModel' - object rigidly attached to the environment.
"""
import logging

import numpy as np

from .autograd import (
    Module,
    Linear,
    Parameter,
    ReLU,
    Sequential,
    as_tensor,
    columns,
    concat,
    evaluating,
    matmul,
    transpose,
    _glorot,
)
from .constants import (
    TACTILE_EMBEDDING_SIZE,
    OBJECT_EMBEDDING_SIZE,
    WRENCH_SIZE,
    POSE_SIZE,
    ACTION_SIZE,
    DYNAMICS_HIDDEN_SIZE,
    TASK_DRAWING,
    TASK_PIVOTING,
    REJECTION_ATTEMPTS,
    MODEL_MEMBRANE,
    MODEL_OBJPOSE,
    MODEL_FIXED,
    MODEL_JACOBIAN,
    MODEL_RANDOM,
    MODEL_KINDS,
)
from .exceptions import ConfigError, InfeasibleActionError, ShapeError
from .models import (
    DYNAMICS_INPUT_SIZE,
    StepModel,
    LatentModel,
    TactileAutoencoder,
    ObjectEncoder,
    MembraneDynamicsNet,
    _check_vectors,
    _std_scale,
    load_checkpoint,
    read_checkpoint_manifest,
)
from .poses import (
    action_from_array,
    compose_planar_vectors,
    relative_planar_vectors,
    robot_action_vectors,
)

OBJPOSE_INPUT_SIZE = (
    POSE_SIZE + WRENCH_SIZE + POSE_SIZE + OBJECT_EMBEDDING_SIZE + ACTION_SIZE
)
LINEAR_OUTPUT_SIZE = TACTILE_EMBEDDING_SIZE + WRENCH_SIZE


class LinearDynamics(Module):
    """'[p'; w'] = A [p; w; r; z; a]' without bias or scaling."""

    def __init__(self, seed=0):
        super(LinearDynamics, self).__init__()
        rng = np.random.default_rng(seed)
        self.matrix = Parameter(_glorot(
            rng,
            DYNAMICS_INPUT_SIZE,
            LINEAR_OUTPUT_SIZE,
            (LINEAR_OUTPUT_SIZE, DYNAMICS_INPUT_SIZE),
        ))

    def forward(self, p_emb, w, r, z_emb, a):
        dtype = self.matrix.dtype
        x = concat([
            as_tensor(p_emb, dtype), as_tensor(w, dtype),
            as_tensor(r, dtype), as_tensor(z_emb, dtype),
            as_tensor(a, dtype),
        ], axis=1)
        y = matmul(x, transpose(self.matrix))
        p_next = columns(y, 0, TACTILE_EMBEDDING_SIZE)
        w_next = columns(y, TACTILE_EMBEDDING_SIZE, LINEAR_OUTPUT_SIZE)
        return p_next, w_next, None


class ObjectPoseDynamicsNet(Module):
    """One-step dynamics of the object pose instead of the membrane.

    Same residual structure as 'MembraneDynamicsNet' with the tactile
    embedding replaced by the grasp frame object pose.
    """

    _buffers = ("input_scale", "output_scale")

    def __init__(self, seed=0):
        super(ObjectPoseDynamicsNet, self).__init__()
        rng = np.random.default_rng(seed)
        hidden = DYNAMICS_HIDDEN_SIZE
        self.hidden = Sequential(
            Linear(OBJPOSE_INPUT_SIZE, hidden, rng), ReLU(),
            Linear(hidden, hidden, rng), ReLU(),
        )
        self.object_head = Linear(hidden, POSE_SIZE, rng)
        self.wrench_head = Linear(hidden, WRENCH_SIZE, rng)
        self.pose_head = Linear(hidden, POSE_SIZE, rng)
        self.input_scale = np.ones(OBJPOSE_INPUT_SIZE, dtype=np.float32)
        self.output_scale = np.ones(
            POSE_SIZE + WRENCH_SIZE + POSE_SIZE, dtype=np.float32
        )

    def set_scaling(self, inputs, deltas):
        """Scales from training inputs (N, 32) and target deltas (N, 18)."""
        self.input_scale = _std_scale(inputs).astype(self.input_scale.dtype)
        self.output_scale = _std_scale(deltas).astype(
            self.output_scale.dtype
        )

    def forward(self, q, w, r, z_emb, a):
        dtype = self.pose_head.weight.dtype
        q = as_tensor(q, dtype)
        w = as_tensor(w, dtype)
        x = concat([
            q, w, as_tensor(r, dtype), as_tensor(z_emb, dtype),
            as_tensor(a, dtype),
        ], axis=1)
        h = self.hidden(x * (1.0 / self.input_scale))
        scale = self.output_scale
        q_next = q + self.object_head(h) * scale[:POSE_SIZE]
        w_next = w + self.wrench_head(h) * scale[
            POSE_SIZE:POSE_SIZE + WRENCH_SIZE
        ]
        delta_r = self.pose_head(h) * scale[POSE_SIZE + WRENCH_SIZE:]
        return q_next, w_next, delta_r


def objpose_forward(net, q, w, r, z_emb, a):
    """Numpy inference of 'ObjectPoseDynamicsNet'.

    Returns:
        tuple[np.ndarray, np.ndarray, np.ndarray]: Next object pose, wrench
            and grasp pose (robot action model plus correction).

    Raises:
        ShapeError: Input dimensions do not match.

    """
    single = np.asarray(q).ndim == 1
    q = _check_vectors(q, POSE_SIZE, "q")
    w = _check_vectors(w, WRENCH_SIZE, "w")
    r = _check_vectors(r, POSE_SIZE, "r")
    z_emb = _check_vectors(z_emb, OBJECT_EMBEDDING_SIZE, "z_emb")
    a = _check_vectors(a, ACTION_SIZE, "a")
    if len(z_emb) == 1 and len(q) > 1:
        z_emb = np.repeat(z_emb, len(q), axis=0)
    with evaluating(net):
        q_next, w_next, delta_r = net(q, w, r, z_emb, a)
    r_next = robot_action_vectors(r, a) + delta_r.data
    output = (q_next.data, w_next.data, r_next)
    if single:
        return tuple(value[0] for value in output)
    return output


# --- Step models ---
class FixedModel(StepModel):
    """Membrane state stays constant while the grasp follows the action."""

    kind = MODEL_FIXED

    def initial(self, membrane, q=None):
        return {
            "p": np.asarray(membrane.p)[None],
            "w": np.asarray(membrane.w, dtype=np.float64)[None],
            "r": np.asarray(membrane.r, dtype=np.float64)[None],
        }

    def step(self, latent, z_emb, actions):
        return {
            "p": latent["p"],
            "w": latent["w"],
            "r": robot_action_vectors(latent["r"], actions),
        }

    def maps(self, latent):
        return latent["p"]


class JacobianModel(StepModel):
    """Object fixed in the world; its grasp frame pose follows the grasp."""

    kind = MODEL_JACOBIAN
    tracks_object_pose = True

    def initial(self, membrane, q=None):
        if q is None:
            raise ValueError("Jacobian model needs the object pose")
        r = np.asarray(membrane.r, dtype=np.float64)[None]
        return {
            "q_world": compose_planar_vectors(r, q),
            "w": np.asarray(membrane.w, dtype=np.float64)[None],
            "r": r,
        }

    def step(self, latent, z_emb, actions):
        return {
            "q_world": latent["q_world"],
            "w": latent["w"],
            "r": robot_action_vectors(latent["r"], actions),
        }

    def object_poses(self, latent):
        return relative_planar_vectors(latent["r"], latent["q_world"])


class ObjectPoseModel(StepModel):
    """Rolls out observed object poses with 'ObjectPoseDynamicsNet'."""

    kind = MODEL_OBJPOSE
    tracks_object_pose = True

    def __init__(self, object_encoder, net):
        self.object_encoder = object_encoder
        self.net = net
        self._embeddings = {}

    def object_embedding(self, object_model):
        key = object_model.name
        if key not in self._embeddings:
            self._embeddings[key] = self.object_encoder.encode_object(
                object_model
            )
        return self._embeddings[key]

    def initial(self, membrane, q=None):
        if q is None:
            raise ValueError("Object pose model needs the object pose")
        return {
            "q": np.asarray(q, dtype=np.float64).reshape(1, POSE_SIZE),
            "w": np.asarray(membrane.w, dtype=np.float64)[None],
            "r": np.asarray(membrane.r, dtype=np.float64)[None],
        }

    def step(self, latent, z_emb, actions):
        q_next, w_next, r_next = objpose_forward(
            self.net, latent["q"], latent["w"], latent["r"], z_emb, actions
        )
        return {"q": q_next, "w": w_next, "r": r_next}

    def object_poses(self, latent):
        # trained on in-plane rotations only
        poses = np.array(latent["q"], dtype=np.float64)
        poses[:, 4:] = 0.0
        return poses


def _load_trained(kind, autoencoder_dir, model_dir):
    object_encoder = ObjectEncoder()
    if kind == MODEL_OBJPOSE:
        net = ObjectPoseDynamicsNet()
        load_checkpoint(
            model_dir, {"net": net, "object_encoder": object_encoder}
        )
        return ObjectPoseModel(object_encoder, net)
    autoencoder = TactileAutoencoder()
    load_checkpoint(autoencoder_dir, {"autoencoder": autoencoder})
    if kind == MODEL_MEMBRANE:
        net = MembraneDynamicsNet()
    else:
        net = LinearDynamics()
    load_checkpoint(model_dir, {"net": net, "object_encoder": object_encoder})
    return LatentModel(autoencoder, object_encoder, net, kind)


def load_step_model(kind, autoencoder_dir=None, model_dir=None):
    """Step model of 'kind', trained kinds loaded from checkpoints.

    Args:
        kind (str): Model kind.
        autoencoder_dir (Optional[str]): Autoencoder checkpoint, needed by
            membrane space models.
        model_dir (Optional[str]): Dynamics checkpoint of trained kinds.

    Returns:
        Optional[StepModel]: Model, None for the random policy.

    Raises:
        ConfigError: Unknown kind, missing or mismatching checkpoint.

    """
    log = logging.getLogger("baselines")
    if kind not in MODEL_KINDS:
        raise ConfigError("Unknown model kind \"{}\"".format(kind))
    if kind == MODEL_RANDOM:
        return None
    if kind == MODEL_FIXED:
        return FixedModel()
    if kind == MODEL_JACOBIAN:
        return JacobianModel()
    if model_dir is None:
        raise ConfigError(
            "Model \"{}\" needs a dynamics checkpoint, run"
            " 'train --stage dynamics --model {}' first".format(kind, kind)
        )
    if kind != MODEL_OBJPOSE and autoencoder_dir is None:
        raise ConfigError(
            "Model \"{}\" needs the autoencoder checkpoint, run"
            " 'train --stage autoencoder' first".format(kind)
        )
    try:
        manifest = read_checkpoint_manifest(model_dir)
        if manifest.get("kind") != kind:
            raise ConfigError(
                "Checkpoint \"{}\" holds a \"{}\" model, not \"{}\"".format(
                    model_dir, manifest.get("kind"), kind
                )
            )
        model = _load_trained(kind, autoencoder_dir, model_dir)
    except FileNotFoundError as exc:
        raise ConfigError(
            "{}, run 'train --stage autoencoder' and 'train --stage"
            " dynamics --model {}' first".format(exc, kind)
        )
    except (KeyError, ShapeError) as exc:
        raise ConfigError(
            "Checkpoint \"{}\" does not match model \"{}\": {}".format(
                model_dir, kind, exc
            )
        )
    log.info("Loaded \"{}\" model from \"{}\"".format(kind, model_dir))
    return model


# --- Policy ---
def pseudo_random_policy(
    task, r, box, rng, y_limit=None, attempts=REJECTION_ATTEMPTS
):
    """Uniform in-box action satisfying the task constraint.

    Drawing actions move along the line (dy >= 0) and keep the grasp below
    'y_limit'. Pivoting actions push toward the table (dz < 0).

    Args:
        task (str): Task name.
        r (np.ndarray): Current grasp pose vector.
        box (ActionBox): Action bounds.
        rng (np.random.Generator): Sampling source.
        y_limit (Optional[float]): Drawing workspace end along y.
        attempts (int): Rejection sampling budget.

    Returns:
        Action4: Accepted action.

    Raises:
        InfeasibleActionError: No action accepted within 'attempts'.

    """
    if task not in (TASK_DRAWING, TASK_PIVOTING):
        raise ConfigError("Unknown task \"{}\"".format(task))
    y = float(np.asarray(r, dtype=np.float64).reshape(6)[1])
    for _ in range(attempts):
        action = box.sample(rng)
        if task == TASK_DRAWING:
            accepted = action[1] >= 0.0 and (
                y_limit is None or y + action[1] <= y_limit
            )
        else:
            accepted = action[2] < 0.0
        if accepted:
            return action_from_array(action)
    raise InfeasibleActionError(task, attempts)

