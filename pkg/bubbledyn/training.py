"""Training of the tactile autoencoder, object encoder and dynamics models.

Training is staged: the autoencoder (with object encoder pretraining) is
fitted first and frozen, then each dynamics model is fitted on the frozen
embeddings. All trainers keep the weights of the epoch with the lowest
validation loss and stop early when it did not improve for 'patience'
epochs.
"""
import math
import logging

import numpy as np

from .autograd import (
    Adam,
    Tensor,
    columns,
    cos,
    evaluating,
    mse,
    sin,
    softmax_cross_entropy,
    take_rows,
    total,
)
from .baselines import ObjectPoseDynamicsNet, LinearDynamics
from .constants import (
    LEARNING_RATE,
    ADAM_BETAS,
    ADAM_EPSILON,
    TACTILE_LOSS_WEIGHT,
    WRENCH_LOSS_WEIGHT,
    POSE_LOSS_WEIGHT,
    BATCH_SIZE,
    MAX_EPOCHS,
    EARLY_STOP_PATIENCE,
    VALIDATION_FRACTION,
    PRETRAIN_CLOUDS_PER_FAMILY,
    PRIMITIVE_FAMILIES,
    OBJECT_CLOUD_POINTS,
    TACTILE_SCALE,
    MODEL_MEMBRANE,
    MODEL_LINEAR,
    MODEL_OBJPOSE,
    DEFAULT_SEED,
)
from .exceptions import ConfigError, TrainingError
from .models import (
    TactileAutoencoder,
    ObjectEncoder,
    MembraneDynamicsNet,
    dynamics_forward,
    prepare_cloud,
)
from .poses import MembraneState, robot_action_vectors
from .tool_shapes import primitive_cloud
from .utils import TrainingProgress, derive_rng

_EVAL_CHUNK = 256


class TrainConfig(object):
    """Optimization settings shared by all trainers.

    Args:
        lr (float): Adam learning rate.
        betas (tuple[float, float]): Adam moment decay rates.
        eps (float): Adam denominator term.
        tactile_weight (float): Weight of the decoded map loss.
        wrench_weight (float): Weight of the wrench loss.
        pose_weight (float): Weight of the grasp pose loss.
        batch_size (int): Samples per optimizer step.
        max_epochs (int): Epoch budget.
        patience (int): Epochs without validation improvement before stop.
        validation_fraction (float): Share of transitions held out.
        seed (int): Seed for splits, batching and initialization.
        pretrain_epochs (int): Object encoder classification epochs.
        pretrain_clouds (int): Synthetic clouds per primitive family.

    """

    def __init__(
        self,
        lr=LEARNING_RATE,
        betas=ADAM_BETAS,
        eps=ADAM_EPSILON,
        tactile_weight=TACTILE_LOSS_WEIGHT,
        wrench_weight=WRENCH_LOSS_WEIGHT,
        pose_weight=POSE_LOSS_WEIGHT,
        batch_size=BATCH_SIZE,
        max_epochs=MAX_EPOCHS,
        patience=EARLY_STOP_PATIENCE,
        validation_fraction=VALIDATION_FRACTION,
        seed=DEFAULT_SEED,
        pretrain_epochs=10,
        pretrain_clouds=PRETRAIN_CLOUDS_PER_FAMILY,
    ):
        if lr <= 0.0:
            raise ConfigError("Learning rate must be positive")
        betas = tuple(float(beta) for beta in betas)
        if len(betas) != 2 or not all(0.0 <= beta < 1.0 for beta in betas):
            raise ConfigError("Adam betas must be two values in [0, 1)")
        for name, value in (
            ("tactile_weight", tactile_weight),
            ("wrench_weight", wrench_weight),
            ("pose_weight", pose_weight),
        ):
            if value < 0.0:
                raise ConfigError(
                    "Loss weight '{}' must not be negative".format(name)
                )
        if batch_size < 2:
            raise ConfigError("Batch size must be at least 2")
        if max_epochs < 1 or patience < 1:
            raise ConfigError("Epoch budget and patience must be positive")
        if pretrain_epochs < 0 or pretrain_clouds < 2:
            raise ConfigError("Invalid object encoder pretraining settings")
        if not 0.0 < validation_fraction < 1.0:
            raise ConfigError("Validation fraction must be in (0, 1)")
        self.lr = float(lr)
        self.betas = betas
        self.eps = float(eps)
        self.tactile_weight = float(tactile_weight)
        self.wrench_weight = float(wrench_weight)
        self.pose_weight = float(pose_weight)
        self.batch_size = int(batch_size)
        self.max_epochs = int(max_epochs)
        self.patience = int(patience)
        self.validation_fraction = float(validation_fraction)
        self.seed = int(seed)
        self.pretrain_epochs = int(pretrain_epochs)
        self.pretrain_clouds = int(pretrain_clouds)

    def to_data(self):
        return {
            "lr": self.lr,
            "betas": list(self.betas),
            "eps": self.eps,
            "tactile_weight": self.tactile_weight,
            "wrench_weight": self.wrench_weight,
            "pose_weight": self.pose_weight,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "validation_fraction": self.validation_fraction,
            "seed": self.seed,
            "pretrain_epochs": self.pretrain_epochs,
            "pretrain_clouds": self.pretrain_clouds,
        }

    @classmethod
    def from_data(cls, data):
        known = set(cls().to_data().keys())
        return cls(**{
            key: value
            for key, value in (data or {}).items()
            if key in known
        })


def make_batches(count, batch_size, rng):
    """Shuffled index batches of at least two samples each.

    Batch normalization needs two samples per batch, so the number of
    batches never exceeds 'count // 2'.
    """
    n_batches = int(math.ceil(count / float(batch_size)))
    n_batches = max(1, min(n_batches, count // 2))
    return np.array_split(rng.permutation(count), n_batches)


def _chunks(count):
    return [
        np.arange(start, min(start + _EVAL_CHUNK, count))
        for start in range(0, count, _EVAL_CHUNK)
    ]


class _Trainer(object):
    """Epoch loop with early stopping and best-weight restore."""

    def __init__(self, cfg=None):
        if cfg is None:
            cfg = TrainConfig()
        self._cfg = cfg
        self._log = None

    @property
    def log(self):
        if self._log is None:
            self._log = logging.getLogger(self.__class__.__name__)
        return self._log

    @property
    def config(self):
        return self._cfg

    def _fail(self, progress, reason, epoch):
        progress.set_failed(reason)
        self.log.error("Training failed in epoch {}: {}".format(epoch, reason))
        raise TrainingError(reason, epoch)

    def _fit(
        self, modules, params, n_train, batch_loss, validation_loss, rng,
        max_epochs=None,
    ):
        """Run the epoch loop.

        Args:
            modules (dict[str, Module]): Modules switched to training mode
                and whose best weights are restored.
            params (list[Parameter]): Optimized parameters.
            n_train (int): Training sample count.
            batch_loss (Callable[[np.ndarray], Tensor]): Loss of a batch of
                training sample indices.
            validation_loss (Callable[[], float]): Validation loss in
                evaluation mode.
            rng (np.random.Generator): Batch shuffling.
            max_epochs (Optional[int]): Override of the epoch budget.

        Returns:
            TrainingProgress: Loss history.

        """
        cfg = self._cfg
        if max_epochs is None:
            max_epochs = cfg.max_epochs
        optimizer = Adam(params, cfg.lr, cfg.betas, cfg.eps)
        progress = TrainingProgress()
        progress.set_started()
        best_states = None
        for epoch in range(max_epochs):
            for module in modules.values():
                module.train()
            losses = []
            for indices in make_batches(n_train, cfg.batch_size, rng):
                optimizer.zero_grad()
                loss = batch_loss(indices)
                value = float(loss.data)
                if not math.isfinite(value):
                    self._fail(progress, "loss is not finite", epoch)
                loss.backward()
                optimizer.step()
                losses.append(value)
                self.log.debug("Batch loss {:.6g}".format(value))
            for module in modules.values():
                module.eval()
            val_loss = float(validation_loss())
            if not math.isfinite(val_loss):
                self._fail(progress, "validation loss is not finite", epoch)
            if progress.add_epoch(float(np.mean(losses)), val_loss):
                best_states = {
                    name: module.state_dict()
                    for name, module in modules.items()
                }
            if progress.epochs_since_best() >= cfg.patience:
                self.log.info("Early stop after epoch {}".format(epoch))
                break
        for name, module in modules.items():
            module.load_state_dict(best_states[name])
            module.eval()
        progress.set_done()
        return progress

    def _split(self, count, name):
        if count < 3:
            raise TrainingError(
                "Need at least 3 transitions to train, got {}".format(count)
            )
        rng = derive_rng(self._cfg.seed, name, "split")
        order = rng.permutation(count)
        n_val = max(1, int(round(count * self._cfg.validation_fraction)))
        n_val = min(n_val, count - 2)
        return np.sort(order[n_val:]), np.sort(order[:n_val])


# --- Autoencoder ---
def split_transition_maps(p_t, p_next, train_idx, val_idx):
    """Maps of both ends of the transitions on each side of a split.

    Args:
        p_t (np.ndarray): Maps before each transition.
        p_next (np.ndarray): Maps after each transition.
        train_idx (np.ndarray): Training transition indices.
        val_idx (np.ndarray): Validation transition indices.

    Returns:
        tuple[np.ndarray, np.ndarray]: Training and validation maps, the
            'p_t' maps of a side followed by its 'p_next' maps.

    """
    return tuple(
        np.concatenate([p_t[indices], p_next[indices]], axis=0)
        for indices in (train_idx, val_idx)
    )


class AutoencoderTrainer(_Trainer):
    """Fits 'TactileAutoencoder' on map reconstruction in millimeters."""

    def train(self, datasets, autoencoder=None):
        """Train on the pooled maps of one or more datasets.

        Args:
            datasets (Union[Dataset, list[Dataset]]): Transition data; both
                'p_t' and 'p_next' maps are used and stay on the same side
                of the validation split.
            autoencoder (Optional[TactileAutoencoder]): Model to continue.

        Returns:
            tuple[TactileAutoencoder, TrainingProgress]: Best model.

        Raises:
            TrainingError: Too little data or non-finite loss.

        """
        if not isinstance(datasets, (list, tuple)):
            datasets = [datasets]
        p_t = []
        p_next = []
        for dataset in datasets:
            arrays = dataset.arrays()
            if len(dataset):
                p_t.append(arrays["p_t"])
                p_next.append(arrays["p_next"])
        if not p_t:
            raise TrainingError("Datasets hold no transitions")
        p_t, p_next = [
            (np.concatenate(maps, axis=0) * TACTILE_SCALE).astype(np.float32)
            for maps in (p_t, p_next)
        ]
        if autoencoder is None:
            autoencoder = TactileAutoencoder(seed=self._cfg.seed)
        train_idx, val_idx = self._split(len(p_t), "autoencoder")
        train_maps, val_maps = split_transition_maps(
            p_t, p_next, train_idx, val_idx
        )
        self.log.info(
            "Training autoencoder on {} maps ({} validation)".format(
                len(train_maps), len(val_maps)
            )
        )

        def batch_loss(indices):
            batch = train_maps[indices]
            return mse(autoencoder(Tensor(batch)), batch)

        def validation_loss():
            value = 0.0
            for chunk in _chunks(len(val_maps)):
                batch = val_maps[chunk]
                value += float(
                    mse(autoencoder(Tensor(batch)), batch).data
                ) * len(chunk)
            return value / len(val_maps)

        progress = self._fit(
            {"autoencoder": autoencoder},
            autoencoder.parameters(),
            len(train_maps),
            batch_loss,
            validation_loss,
            derive_rng(self._cfg.seed, "autoencoder", "batches"),
        )
        return autoencoder, progress

    def pretrain_object_encoder(self, encoder=None):
        """Classification pretraining on synthetic primitive clouds.

        Returns:
            tuple[ObjectEncoder, Optional[TrainingProgress]]: Pretrained
                encoder, no progress when pretraining is disabled.

        """
        cfg = self._cfg
        if encoder is None:
            encoder = ObjectEncoder(seed=cfg.seed)
        if cfg.pretrain_epochs == 0:
            self.log.info("Object encoder pretraining disabled")
            return encoder, None
        rng = derive_rng(cfg.seed, "object_encoder", "clouds")
        clouds = []
        labels = []
        for label, family in enumerate(PRIMITIVE_FAMILIES):
            for _ in range(cfg.pretrain_clouds):
                clouds.append(prepare_cloud(
                    primitive_cloud(family, rng, OBJECT_CLOUD_POINTS)
                ))
                labels.append(label)
        clouds = np.stack(clouds)
        labels = np.asarray(labels)
        train_idx, val_idx = self._split(len(clouds), "object_encoder")
        self.log.info("Pretraining object encoder on {} clouds".format(
            len(train_idx)
        ))

        def batch_loss(indices):
            chosen = train_idx[indices]
            return softmax_cross_entropy(
                encoder.classify(list(clouds[chosen])), labels[chosen]
            )

        def validation_loss():
            value = 0.0
            for chunk in _chunks(len(val_idx)):
                chosen = val_idx[chunk]
                value += float(softmax_cross_entropy(
                    encoder.classify(list(clouds[chosen])), labels[chosen]
                ).data) * len(chunk)
            return value / len(val_idx)

        progress = self._fit(
            {"object_encoder": encoder},
            encoder.parameters(),
            len(train_idx),
            batch_loss,
            validation_loss,
            derive_rng(cfg.seed, "object_encoder", "batches"),
            max_epochs=cfg.pretrain_epochs,
        )
        return encoder, progress


def classification_accuracy(encoder, clouds, labels):
    """Share of clouds whose family is predicted correctly."""
    prepared = [prepare_cloud(cloud) for cloud in clouds]
    with evaluating(encoder):
        logits = encoder.classify(prepared).data
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))


# --- Losses ---
def dynamics_loss(
    net, autoencoder, z_emb, batch, tactile_weight, wrench_weight,
    pose_weight,
):
    """Weighted loss of a membrane space dynamics network.

    Args:
        net (Module): Dynamics network.
        autoencoder (TactileAutoencoder): Frozen decoder.
        z_emb (Tensor): (B, 10) object embeddings.
        batch (dict[str, np.ndarray]): 'p_emb', 'w', 'r', 'a', 'target_mm'
            (next pooled maps in millimeters), 'w_next', 'r_next' and
            'r_action' (robot action model prediction).
        tactile_weight (float): Decoded map weight.
        wrench_weight (float): Wrench weight.
        pose_weight (float): Grasp pose weight.

    Returns:
        tuple[Tensor, dict[str, float]]: Total loss and unweighted terms.

    """
    p_next, w_next, delta_r = net(
        batch["p_emb"], batch["w"], batch["r"], z_emb, batch["a"]
    )
    tactile = mse(autoencoder.decode(p_next), batch["target_mm"])
    wrench = mse(w_next, batch["w_next"])
    loss = tactile * tactile_weight + wrench * wrench_weight
    terms = {
        "tactile": float(tactile.data),
        "wrench": float(wrench.data),
        "pose": 0.0,
    }
    if delta_r is not None:
        pose = mse(delta_r + batch["r_action"], batch["r_next"])
        loss = loss + pose * pose_weight
        terms["pose"] = float(pose.data)
    return loss, terms


def planar_pose_loss(q_pred, q_target, centroids, spreads):
    """Mean squared model point distance of planar poses, closed form.

    For points m with centroid c and mean squared norm s in the plane the
    mean of |R1 m + t1 - R2 m - t2|^2 equals
    |dt|^2 + 2 dt.((R1 - R2) c) + 2 (1 - cos(theta1 - theta2)) s.

    Args:
        q_pred (Tensor): (B, 6) predicted poses, angle in column 3.
        q_target (np.ndarray): (B, 6) target poses.
        centroids (np.ndarray): (B, 2) in-plane model centroids.
        spreads (np.ndarray): (B, 1) in-plane mean squared point norms.

    Returns:
        Tensor: Batch mean.

    """
    q_target = np.asarray(q_target, dtype=q_pred.dtype)
    delta = columns(q_pred, 0, 3) - q_target[:, :3]
    theta = columns(q_pred, 3, 4)
    theta_target = q_target[:, 3:4]
    c_y = centroids[:, 0:1].astype(q_pred.dtype)
    c_z = centroids[:, 1:2].astype(q_pred.dtype)
    rotated_y = cos(theta) * c_y - sin(theta) * c_z
    rotated_z = sin(theta) * c_y + cos(theta) * c_z
    target_y = np.cos(theta_target) * c_y - np.sin(theta_target) * c_z
    target_z = np.sin(theta_target) * c_y + np.cos(theta_target) * c_z
    cross = (
        columns(delta, 1, 2) * (rotated_y - target_y)
        + columns(delta, 2, 3) * (rotated_z - target_z)
    )
    turn = cos(theta - theta_target) * (-spreads.astype(q_pred.dtype))
    value = (
        total(delta * delta) + total(cross) * 2.0
        + total(turn + spreads.astype(q_pred.dtype)) * 2.0
    )
    return value * (1.0 / len(q_target))


def object_moments(object_models):
    """In-plane centroid (N, 2) and mean squared norm (N, 1) per object."""
    centroids = []
    spreads = []
    for object_model in object_models:
        points = np.asarray(object_model.points, dtype=np.float64)[:, 1:]
        centroids.append(points.mean(axis=0))
        spreads.append([np.mean(np.sum(points ** 2, axis=1))])
    return np.array(centroids), np.array(spreads)


def objpose_loss(
    net, z_emb, batch, centroids, spreads, tactile_weight, wrench_weight,
    pose_weight,
):
    """Weighted loss of 'ObjectPoseDynamicsNet'.

    The object pose term takes the place of the decoded map term.
    """
    q_next, w_next, delta_r = net(
        batch["q"], batch["w"], batch["r"], z_emb, batch["a"]
    )
    obj = planar_pose_loss(q_next, batch["q_next"], centroids, spreads)
    wrench = mse(w_next, batch["w_next"])
    pose = mse(delta_r + batch["r_action"], batch["r_next"])
    loss = (
        obj * tactile_weight + wrench * wrench_weight + pose * pose_weight
    )
    terms = {
        "object_pose": float(obj.data),
        "wrench": float(wrench.data),
        "pose": float(pose.data),
    }
    return loss, terms


# --- Dynamics ---
class DynamicsTrainer(_Trainer):
    """Fits a dynamics model on frozen tactile and object features.

    Args:
        kind (str): 'membrane', 'linear' or 'objpose'.
        cfg (Optional[TrainConfig]): Optimization settings.

    """

    def __init__(self, kind, cfg=None):
        if kind not in (MODEL_MEMBRANE, MODEL_LINEAR, MODEL_OBJPOSE):
            raise ConfigError(
                "Model \"{}\" has no trainable dynamics".format(kind)
            )
        super(DynamicsTrainer, self).__init__(cfg)
        self._kind = kind

    @property
    def kind(self):
        return self._kind

    def make_net(self):
        if self._kind == MODEL_MEMBRANE:
            return MembraneDynamicsNet(seed=self._cfg.seed)
        if self._kind == MODEL_LINEAR:
            return LinearDynamics(seed=self._cfg.seed)
        return ObjectPoseDynamicsNet(seed=self._cfg.seed)

    def prepare(self, dataset, autoencoder=None):
        """Numpy training arrays of a dataset.

        Object pose models drop transitions without both observations.
        """
        arrays = dataset.arrays()
        data = {
            "w": arrays["w_t"].astype(np.float64),
            "r": arrays["r_t"].astype(np.float64),
            "a": arrays["a_t"].astype(np.float64),
            "w_next": arrays["w_next"].astype(np.float64),
            "r_next": arrays["r_next"].astype(np.float64),
            "z_id": arrays["z_id"].astype(int),
        }
        data["r_action"] = robot_action_vectors(data["r"], data["a"])
        if self._kind == MODEL_OBJPOSE:
            data["q"] = arrays["q_obs_t"].astype(np.float64)
            data["q_next"] = arrays["q_obs_next"].astype(np.float64)
            valid = np.all(np.isfinite(data["q"]), axis=1) & np.all(
                np.isfinite(data["q_next"]), axis=1
            )
            dropped = int(np.sum(~valid))
            if dropped:
                self.log.warning(
                    "Skipping {} transitions without observed pose".format(
                        dropped
                    )
                )
            data = {key: value[valid] for key, value in data.items()}
        else:
            data["p_emb"] = autoencoder.encode_tactile(arrays["p_t"]).astype(
                np.float64
            )
            data["p_emb_next"] = autoencoder.encode_tactile(
                arrays["p_next"]
            ).astype(np.float64)
            data["target_mm"] = arrays["p_next"] * TACTILE_SCALE
        return data

    def _inputs_and_deltas(self, data, z_emb):
        if self._kind == MODEL_OBJPOSE:
            state = data["q"]
            delta = data["q_next"] - data["q"]
        else:
            state = data["p_emb"]
            delta = data["p_emb_next"] - data["p_emb"]
        inputs = np.concatenate(
            [state, data["w"], data["r"], z_emb, data["a"]], axis=1
        )
        deltas = np.concatenate([
            delta,
            data["w_next"] - data["w"],
            data["r_next"] - data["r_action"],
        ], axis=1)
        return inputs, deltas

    def train(self, dataset, object_encoder, autoencoder=None, net=None):
        """Train the dynamics network and the object embedding head.

        Args:
            dataset (Dataset): Transitions of one task.
            object_encoder (ObjectEncoder): Pretrained encoder; only its
                last layer is trained.
            autoencoder (Optional[TactileAutoencoder]): Frozen embedding,
                required by membrane space models.
            net (Optional[Module]): Network to continue.

        Returns:
            tuple[Module, ObjectEncoder, TrainingProgress]: Best weights.

        Raises:
            ConfigError: Autoencoder is missing for a membrane space model.
            TrainingError: Too little data or non-finite loss.

        """
        cfg = self._cfg
        if self._kind != MODEL_OBJPOSE:
            if autoencoder is None:
                raise ConfigError(
                    "Model \"{}\" needs the trained autoencoder, run"
                    " 'train --stage autoencoder' first".format(self._kind)
                )
            autoencoder.eval()
            autoencoder.set_trainable(False)
        if net is None:
            net = self.make_net()
        data = self.prepare(dataset, autoencoder)
        features = object_encoder.feature_vectors(dataset.objects)
        object_encoder.freeze_features()
        centroids, spreads = object_moments(dataset.objects)

        count = len(data["z_id"])
        train_idx, val_idx = self._split(count, self._kind)
        if hasattr(net, "set_scaling"):
            object_encoder.eval()
            z_all = object_encoder.head(Tensor(features)).data
            inputs, deltas = self._inputs_and_deltas(
                {key: value[train_idx] for key, value in data.items()},
                z_all[data["z_id"][train_idx]],
            )
            net.set_scaling(inputs, deltas)
        self.log.info(
            "Training \"{}\" dynamics on {} transitions ({} validation)"
            .format(self._kind, len(train_idx), len(val_idx))
        )

        def loss_of(indices):
            batch = {key: value[indices] for key, value in data.items()}
            z_emb = take_rows(
                object_encoder.head(Tensor(features)), batch["z_id"]
            )
            if self._kind == MODEL_OBJPOSE:
                return objpose_loss(
                    net, z_emb, batch,
                    centroids[batch["z_id"]], spreads[batch["z_id"]],
                    cfg.tactile_weight, cfg.wrench_weight, cfg.pose_weight,
                )
            return dynamics_loss(
                net, autoencoder, z_emb, batch,
                cfg.tactile_weight, cfg.wrench_weight, cfg.pose_weight,
            )

        def batch_loss(indices):
            loss, terms = loss_of(train_idx[indices])
            self.log.debug("Loss terms {}".format(terms))
            return loss

        def validation_loss():
            value = 0.0
            for chunk in _chunks(len(val_idx)):
                loss, _ = loss_of(val_idx[chunk])
                value += float(loss.data) * len(chunk)
            return value / len(val_idx)

        progress = self._fit(
            {"net": net, "object_encoder": object_encoder},
            net.parameters() + object_encoder.head.parameters(),
            len(train_idx),
            batch_loss,
            validation_loss,
            derive_rng(cfg.seed, self._kind, "batches"),
        )
        return net, object_encoder, progress

    def train_step(self, net, autoencoder, z_emb, batch, optimizer=None):
        """One loss evaluation and backward pass, for inspection.

        Gradients are left on the parameters; the optimizer steps only when
        passed.

        Returns:
            tuple[float, dict[str, float]]: Loss and its terms.

        """
        cfg = self._cfg
        net.zero_grad()
        loss, terms = dynamics_loss(
            net, autoencoder, z_emb, batch,
            cfg.tactile_weight, cfg.wrench_weight, cfg.pose_weight,
        )
        loss.backward()
        if optimizer is not None:
            optimizer.step()
        return float(loss.data), terms


def evaluate_embedding_error(net, autoencoder, object_encoder, dataset):
    """Mean squared error of predicted next tactile embeddings."""
    arrays = dataset.arrays()
    z_all = np.stack([
        object_encoder.encode_object(obj) for obj in dataset.objects
    ])
    z_emb = z_all[arrays["z_id"].astype(int)]
    p_emb = autoencoder.encode_tactile(arrays["p_t"])
    target = autoencoder.encode_tactile(arrays["p_next"])
    predicted, _, _ = dynamics_forward(
        net, p_emb, arrays["w_t"], arrays["r_t"], z_emb, arrays["a_t"]
    )
    return float(np.mean((predicted - target) ** 2))


def one_step_tactile_error(model, dataset):
    """Mean squared error of predicted next maps in millimeters.

    Args:
        model (StepModel): Membrane space model exposing 'maps'.
        dataset (Dataset): Held out transitions.

    Returns:
        float: Error over both membranes and all pixels.

    Raises:
        TrainingError: Dataset is empty or the model predicts no maps.

    """
    if not len(dataset):
        raise TrainingError("Dataset holds no transitions")
    arrays = dataset.arrays()
    latents = [
        model.initial(MembraneState(p, w, r))
        for p, w, r in zip(arrays["p_t"], arrays["w_t"], arrays["r_t"])
    ]
    latent = {
        key: np.concatenate([item[key] for item in latents], axis=0)
        for key in latents[0]
    }
    z_emb = None
    embeddings = [model.object_embedding(obj) for obj in dataset.objects]
    if embeddings and embeddings[0] is not None:
        z_emb = np.stack(embeddings)[arrays["z_id"].astype(int)]
    predicted = model.maps(model.step(latent, z_emb, arrays["a_t"]))
    if predicted is None:
        raise TrainingError(
            "Model \"{}\" predicts no tactile maps".format(model.kind)
        )
    error = (np.asarray(predicted) - arrays["p_next"]) * TACTILE_SCALE
    return float(np.mean(error ** 2))
