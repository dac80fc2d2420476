"""Sampling based receding horizon control.

Each control step perturbs the nominal action sequence, rolls every sample
out through a dynamics model, turns predicted membrane states into object
poses with the observation model and re-weights the samples by their
exponentiated cost.
"""
import csv
import time
import logging

import numpy as np

from .constants import (
    MPPI_LAMBDA,
    MPPI_HORIZON,
    MPPI_SAMPLES,
    MPPI_NOISE_FRACTION,
    COST_WRENCH_WEIGHT,
)
from .exceptions import ConfigError, ControllerError, ObservationError
from .poses import (
    pose_to_vector,
    wrench_to_vector,
    rotation_matrices,
    planar_from_vector,
    compose_planar_vectors,
    action_from_array,
)
from .processing import upsample

# Timed phases of a control step, written as "time_<phase>" trace columns
TRACE_TIMINGS = (
    "sampling", "rollout", "observation", "cost", "update", "total"
)


class MppiConfig(object):
    """Controller hyper-parameters.

    Args:
        lambda_ (float): Temperature of the cost weighting.
        horizon (int): Planned steps.
        samples (int): Sampled sequences per step.
        noise_fraction (float): Noise sigma as a fraction of each action
            dimension half-range.

    """

    def __init__(
        self,
        lambda_=MPPI_LAMBDA,
        horizon=MPPI_HORIZON,
        samples=MPPI_SAMPLES,
        noise_fraction=MPPI_NOISE_FRACTION,
    ):
        if lambda_ <= 0.0:
            raise ConfigError("MPPI lambda must be positive")
        if horizon < 1 or samples < 1:
            raise ConfigError("MPPI horizon and samples must be at least 1")
        if noise_fraction < 0.0:
            raise ConfigError("MPPI noise fraction must not be negative")
        self.lambda_ = float(lambda_)
        self.horizon = int(horizon)
        self.samples = int(samples)
        self.noise_fraction = float(noise_fraction)

    def to_data(self):
        return {
            "lambda": self.lambda_,
            "horizon": self.horizon,
            "samples": self.samples,
            "noise_fraction": self.noise_fraction,
        }

    @classmethod
    def from_data(cls, data):
        data = dict(data or {})
        kwargs = {}
        if "lambda" in data:
            kwargs["lambda_"] = data["lambda"]
        for key in ("horizon", "samples", "noise_fraction"):
            if key in data:
                kwargs[key] = data[key]
        return cls(**kwargs)


class CostConfig(object):
    def __init__(self, wrench_weight=COST_WRENCH_WEIGHT):
        if wrench_weight < 0.0:
            raise ConfigError("Wrench weight must not be negative")
        self.wrench_weight = float(wrench_weight)

    def to_data(self):
        return {"wrench_weight": self.wrench_weight}

    @classmethod
    def from_data(cls, data):
        data = dict(data or {})
        return cls(data.get("wrench_weight", COST_WRENCH_WEIGHT))


# --- Costs ---
def object_pose_costs(q, q_goal, points):
    """Batched object pose cost.

    Mean over model points of the squared distance between the point
    placed by 'q' and by 'q_goal'.

    Args:
        q (np.ndarray): (N, 6) packed poses.
        q_goal (np.ndarray): (6, ) packed goal pose in the same frame.
        points (np.ndarray): (M, 3) model points in the object frame.

    Returns:
        np.ndarray: (N, ) costs.

    """
    q = np.asarray(q, dtype=np.float64).reshape(-1, 6)
    q_goal = np.asarray(q_goal, dtype=np.float64).reshape(6)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rotations = rotation_matrices(q[:, 3:])
    goal_rotation = rotation_matrices(q_goal[None, 3:])[0]
    placed = np.einsum("nij,mj->nmi", rotations, points) + q[:, None, :3]
    goal = points @ goal_rotation.T + q_goal[:3]
    return np.mean(np.sum((placed - goal) ** 2, axis=2), axis=1)


def object_pose_cost(q, q_goal, points):
    """Object pose cost of two poses, zero iff the clouds coincide."""
    return float(object_pose_costs(
        pose_to_vector(q)[None], pose_to_vector(q_goal), points
    )[0])


def task_costs(q, w, q_goal, w_goal, points, wrench_weight):
    """Batched pose cost plus weighted wrench mean squared error."""
    w = np.asarray(w, dtype=np.float64).reshape(-1, 6)
    wrench = np.mean((w - np.asarray(w_goal).reshape(6)) ** 2, axis=1)
    return object_pose_costs(q, q_goal, points) + wrench_weight * wrench


def task_cost(x, x_goal, points, wrench_weight=COST_WRENCH_WEIGHT):
    """Cost of one task state against a goal task state."""
    return float(task_costs(
        pose_to_vector(x.q)[None],
        wrench_to_vector(x.w)[None],
        pose_to_vector(x_goal.q),
        wrench_to_vector(x_goal.w),
        points,
        wrench_weight,
    )[0])


def world_to_grasp_wrench(w_world, r):
    """Rotate a world wrench into grasp frames (N, 6)."""
    rotations = rotation_matrices(np.asarray(r).reshape(-1, 6)[:, 3:])
    w_world = np.asarray(w_world, dtype=np.float64).reshape(6)
    force = np.einsum("nji,j->ni", rotations, w_world[:3])
    torque = np.einsum("nji,j->ni", rotations, w_world[3:])
    return np.concatenate([force, torque], axis=1)


def goal_costs(q, w, r, goal, frame, points, wrench_weight):
    """Costs of grasp frame predictions against a goal task state.

    Args:
        q (np.ndarray): (N, 6) grasp frame object poses.
        w (np.ndarray): (N, 6) grasp frame wrenches.
        r (np.ndarray): (N, 6) world grasp poses.
        goal (TaskState): Goal; the pose is in 'frame', the wrench in the
            world frame.
        frame (str): 'world' or 'grasp'.
        points (np.ndarray): Model points.
        wrench_weight (float): Wrench term weight.

    """
    if frame == "world":
        q = compose_planar_vectors(r, q)
    w = np.asarray(w, dtype=np.float64).reshape(-1, 6)
    w_goal = world_to_grasp_wrench(wrench_to_vector(goal.w), r)
    wrench = np.mean((w - w_goal) ** 2, axis=1)
    pose = object_pose_costs(q, pose_to_vector(goal.q), points)
    return pose + wrench_weight * wrench


# --- Sampling and update ---
def sample_sequences(nominal, cfg, box, rng):
    """Gaussian perturbations of the nominal sequence, clipped to the box.

    Args:
        nominal (np.ndarray): (T, 4) nominal actions.
        cfg (MppiConfig): Controller config.
        box (ActionBox): Action bounds.
        rng (np.random.Generator): Noise source.

    Returns:
        np.ndarray: (N, T, 4) sampled sequences.

    """
    nominal = np.asarray(nominal, dtype=np.float64)
    sigma = cfg.noise_fraction * box.half_range
    noise = rng.normal(size=(cfg.samples, ) + nominal.shape) * sigma
    return box.clip(nominal[None] + noise)


def mppi_weights(costs, lambda_):
    """Normalized exponentiated-cost weights, zero for infinite costs.

    Raises:
        ControllerError: No finite cost.

    """
    costs = np.asarray(costs, dtype=np.float64)
    finite = np.isfinite(costs)
    if not np.any(finite):
        raise ControllerError("No feasible rollout among {} samples".format(
            len(costs)
        ))
    weights = np.zeros_like(costs)
    lowest = float(np.min(costs[finite]))
    weights[finite] = np.exp(-(costs[finite] - lowest) / lambda_)
    return weights / weights.sum()


def mppi_update(nominal, samples, costs, lambda_):
    """Importance weighted nominal sequence update."""
    nominal = np.asarray(nominal, dtype=np.float64)
    weights = mppi_weights(costs, lambda_)
    delta = np.asarray(samples, dtype=np.float64) - nominal[None]
    return nominal + np.einsum("n,n...->...", weights, delta)


def rollout(model, observe, latent, z_emb, sequences):
    """Roll sampled sequences through a dynamics model.

    Args:
        model (StepModel): Dynamics model.
        observe (Callable): Maps (pooled maps (2, 25, 20), w, r) of one
            predicted state to a grasp frame object pose vector, raising
            'ObservationError' on failure. Unused for models tracking the
            object pose.
        latent (dict[str, np.ndarray]): Initial latent state, batch of 1.
        z_emb (Optional[np.ndarray]): Object embedding.
        sequences (np.ndarray): (N, T, 4) action sequences.

    Returns:
        dict[str, np.ndarray]: 'q', 'w', 'r' of shape (N, T, 6) and
            boolean 'valid' of shape (N, T).

    """
    count, horizon = sequences.shape[:2]
    state = {
        key: np.repeat(value, count, axis=0) for key, value in latent.items()
    }
    z_batch = None
    if z_emb is not None:
        z_batch = np.repeat(np.asarray(z_emb)[None], count, axis=0)
    q_out = np.zeros((count, horizon, 6))
    w_out = np.zeros((count, horizon, 6))
    r_out = np.zeros((count, horizon, 6))
    valid = np.ones((count, horizon), dtype=bool)
    for step in range(horizon):
        state = model.step(state, z_batch, sequences[:, step])
        w_out[:, step] = state["w"]
        r_out[:, step] = state["r"]
        if model.tracks_object_pose:
            q_out[:, step] = model.object_poses(state)
            continue
        maps = model.maps(state)
        for index in range(count):
            if not valid[index, :step].all():
                valid[index, step] = False
                continue
            try:
                q_out[index, step] = observe(
                    maps[index], state["w"][index], state["r"][index]
                )
            except ObservationError:
                valid[index, step] = False
    return {"q": q_out, "w": w_out, "r": r_out, "valid": valid}


class MppiOptimizer(object):
    """Model agnostic MPPI iteration over a nominal action sequence.

    Args:
        cfg (MppiConfig): Controller config.
        rng (np.random.Generator): Noise source.

    """

    def __init__(self, cfg, rng):
        self._cfg = cfg
        self._rng = rng
        self._nominal = None

    @property
    def nominal(self):
        return None if self._nominal is None else self._nominal.copy()

    def reset(self, box):
        """Nominal sequence at the mean of the action box."""
        self._nominal = np.repeat(box.center[None], self._cfg.horizon, axis=0)

    def step(self, box, evaluate, timings=None):
        """Sample, evaluate and update once, then shift the nominal.

        Args:
            box (ActionBox): Action bounds.
            evaluate (Callable[[np.ndarray], np.ndarray]): Maps sampled
                sequences (N, T, 4) to costs (N, ), infinite when
                infeasible.
            timings (Optional[dict[str, float]]): Receives the seconds
                spent in 'sampling' and 'update'.

        Returns:
            tuple[np.ndarray, np.ndarray]: Action to execute and the sample
                costs.

        Raises:
            ControllerError: All samples are infeasible.

        """
        if timings is None:
            timings = {}
        if self._nominal is None:
            self.reset(box)
        start = time.perf_counter()
        nominal = box.clip(self._nominal)
        samples = sample_sequences(nominal, self._cfg, box, self._rng)
        timings["sampling"] = time.perf_counter() - start

        costs = np.asarray(evaluate(samples), dtype=np.float64)

        start = time.perf_counter()
        updated = mppi_update(nominal, samples, costs, self._cfg.lambda_)
        self._nominal = np.concatenate(
            [updated[1:], box.center[None]], axis=0
        )
        timings["update"] = time.perf_counter() - start
        return box.clip(updated[0]), costs


class MppiController(object):
    """Receding horizon controller around any step model.

    Args:
        model (StepModel): Dynamics model.
        observer (ObservationModel): Observation model.
        object_model (ObjectModel): Held object.
        cfg (MppiConfig): Controller config.
        cost_cfg (CostConfig): Cost config.
        rng (np.random.Generator): Sampling and observation randomness.

    """

    def __init__(self, model, observer, object_model, cfg, cost_cfg, rng):
        self._model = model
        self._observer = observer
        self._object = object_model
        self._cost_cfg = cost_cfg
        self._optimizer = MppiOptimizer(cfg, rng)
        self._z_emb = model.object_embedding(object_model)
        self._trace = []
        self._log = None

    @property
    def log(self):
        if self._log is None:
            self._log = logging.getLogger(self.__class__.__name__)
        return self._log

    @property
    def nominal(self):
        return self._optimizer.nominal

    @property
    def trace(self):
        return list(self._trace)

    def reset(self, box):
        self._optimizer.reset(box)
        self._trace = []

    def _observe_prediction(self, prior, timings):
        def observe(maps, w, r):
            start = time.perf_counter()
            try:
                return self._observer.observe_maps(
                    upsample(maps), w, r, self._object, prior
                )
            finally:
                timings["observation"] += time.perf_counter() - start
        return observe

    def control_step(self, membrane, q, goal, frame, box):
        """One optimization iteration and the action to execute.

        Args:
            membrane (MembraneState): Current observed membrane state.
            q (np.ndarray): Current object pose estimate, grasp frame.
            goal (TaskState): Goal task state.
            frame (str): Frame of the goal pose.
            box (ActionBox): Current action bounds.

        Returns:
            Action4: First action of the updated nominal sequence.

        Raises:
            ControllerError: No sample produced a feasible rollout.

        """
        timings = dict.fromkeys(TRACE_TIMINGS, 0.0)
        latent = self._model.initial(membrane, q)
        prior = float(planar_from_vector(q)[0, 2])
        observe = self._observe_prediction(prior, timings)

        def evaluate(samples):
            start = time.perf_counter()
            observed = timings["observation"]
            predicted = rollout(
                self._model, observe, latent, self._z_emb, samples
            )
            # model steps only, observation is timed apart
            timings["rollout"] += time.perf_counter() - start - (
                timings["observation"] - observed
            )

            start = time.perf_counter()
            costs = np.zeros(len(samples))
            for step in range(samples.shape[1]):
                costs += goal_costs(
                    predicted["q"][:, step],
                    predicted["w"][:, step],
                    predicted["r"][:, step],
                    goal,
                    frame,
                    self._object.points,
                    self._cost_cfg.wrench_weight,
                )
            costs[~predicted["valid"].all(axis=1)] = np.inf
            timings["cost"] += time.perf_counter() - start
            return costs

        start = time.perf_counter()
        action, costs = self._optimizer.step(box, evaluate, timings)
        timings["total"] = time.perf_counter() - start

        finite = costs[np.isfinite(costs)]
        row = {
            "step": len(self._trace),
            "gw": action[0],
            "dy": action[1],
            "dz": action[2],
            "dphi": action[3],
            "min_cost": float(finite.min()),
            "mean_cost": float(finite.mean()),
            "feasible": int(len(finite)),
        }
        for index, value in enumerate(np.asarray(q).reshape(6)):
            row["q{}".format(index)] = float(value)
        for index, value in enumerate(np.asarray(membrane.w).reshape(6)):
            row["w{}".format(index)] = float(value)
        for key, value in timings.items():
            row["time_{}".format(key)] = value
        self._trace.append(row)
        self.log.debug(
            "Control step {} min cost {:.6g} ({} feasible)".format(
                row["step"], row["min_cost"], row["feasible"]
            )
        )
        return action_from_array(action)

    def write_trace(self, path):
        write_trace(path, self._trace)


def write_trace(path, rows):
    """Write per-step controller rows as CSV, nothing when empty."""
    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as stream:
        writer = csv.DictWriter(stream, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
