"""Simulator data collection for the drawing and pivoting tasks.

Every episode starts from a fresh grasp. An episode in which the tool
slips out of the grasp, or the equilibrium solve fails, is discarded as a
whole and a new one is started.
"""
import math
import logging
import collections

import numpy as np

from .constants import (
    TASK_DRAWING,
    TASK_PIVOTING,
    TASK_NAMES,
    TRANSITIONS_PER_TOOL,
    RANDOM_ACTION_PROBABILITY,
    DRAWING_LINE_FRACTION,
    DRAWING_EPISODE_LENGTH,
    DRAWING_LINE_LENGTH,
    DRAWING_START_GAP,
    DRAWING_FEED_ANGLE,
    RANDOM_EPISODE_LENGTH,
    PIVOTING_EPISODE_LENGTH,
    PIVOTING_CONTACT_ANGLE,
    PIVOTING_FEED_ANGLE,
    GRASP_WIDTH,
    IMPEDANCE_LIMIT,
    MAX_DISCARDED_EPISODES,
)
from .dataset import Dataset, Transition
from .exceptions import (
    ConfigError,
    SolverError,
    ObservationError,
    CollectionError,
)
from .observation import ObservationModel, ContactConfig
from .poses import (
    Action4,
    action_from_array,
    planar_from_vector,
    planar_compose,
    planar_inverse,
    rotation_2d,
)
from .simulator import (
    SimConfig,
    MembraneSimulator,
    make_sim_state,
    grasp_planar,
    object_planar,
    relative_planar,
    height_above_environment,
)
from .tasks import (
    DrawingCanvas,
    drawing_action_box,
    pivoting_action_box,
    environment_plane,
    drawing_goal_sequence,
    drawing_goal_index,
    jacobian_policy_drawing,
    tool_pose_for_tip,
    tool_tip_world,
)

# Start positions of random drawing lines along the board, meters
_RANDOM_LINE_START = (-0.1, 0.2)
# Largest start gap of random drawing lines below the board, meters
_RANDOM_LINE_GAP = 0.005

EpisodeResult = collections.namedtuple(
    "EpisodeResult", ("records", "reason")
)


class CollectionConfig(object):
    """Data collection parameters.

    Args:
        per_tool (int): Transitions recorded per tool.
        random_probability (float): Chance of a random action while
            drawing the evaluation line.
        line_fraction (float): Share of drawing transitions collected on
            the evaluation line, the rest come from random lines.
        line_length (float): Evaluation line length, meters.
        drawing_episode_length (int): Step cap of evaluation line episodes.
        random_episode_length (int): Steps of one random drawing line.
        pivoting_episode_length (int): Random actions per pivoting episode.
        width (float): Gripper width of a fresh grasp, meters.
        start_gap (float): Tip distance below the board at a line start.
        drawing_feed (float): Largest in-hand angle of a fresh marker grasp,
            radians.
        pivoting_feed (float): Largest in-hand angle of a fresh pivoting
            grasp, radians.
        contact_angle (float): World tool angle when pivoting starts,
            radians; the sign is random.
        impedance (float): Drawing pressing bound, meters.
        observe (bool): Store observation model poses next to the truth.
        max_discarded (int): Failed episodes tolerated per tool.

    """

    def __init__(
        self,
        per_tool=TRANSITIONS_PER_TOOL,
        random_probability=RANDOM_ACTION_PROBABILITY,
        line_fraction=DRAWING_LINE_FRACTION,
        line_length=DRAWING_LINE_LENGTH,
        drawing_episode_length=DRAWING_EPISODE_LENGTH,
        random_episode_length=RANDOM_EPISODE_LENGTH,
        pivoting_episode_length=PIVOTING_EPISODE_LENGTH,
        width=GRASP_WIDTH,
        start_gap=DRAWING_START_GAP,
        drawing_feed=DRAWING_FEED_ANGLE,
        pivoting_feed=PIVOTING_FEED_ANGLE,
        contact_angle=PIVOTING_CONTACT_ANGLE,
        impedance=IMPEDANCE_LIMIT,
        observe=True,
        max_discarded=MAX_DISCARDED_EPISODES,
    ):
        if per_tool < 1:
            raise ConfigError("At least one transition per tool is needed")
        for name, value in (
            ("random_probability", random_probability),
            ("line_fraction", line_fraction),
        ):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(
                    "Value '{}' must be in [0, 1] got {}".format(name, value)
                )
        for name, value in (
            ("drawing_episode_length", drawing_episode_length),
            ("random_episode_length", random_episode_length),
            ("pivoting_episode_length", pivoting_episode_length),
        ):
            if value < 1:
                raise ConfigError(
                    "Value '{}' must be positive got {}".format(name, value)
                )
        self.per_tool = int(per_tool)
        self.random_probability = float(random_probability)
        self.line_fraction = float(line_fraction)
        self.line_length = float(line_length)
        self.drawing_episode_length = int(drawing_episode_length)
        self.random_episode_length = int(random_episode_length)
        self.pivoting_episode_length = int(pivoting_episode_length)
        self.width = float(width)
        self.start_gap = float(start_gap)
        self.drawing_feed = float(drawing_feed)
        self.pivoting_feed = float(pivoting_feed)
        self.contact_angle = float(contact_angle)
        self.impedance = float(impedance)
        self.observe = bool(observe)
        self.max_discarded = int(max_discarded)

    @property
    def line_transitions(self):
        """Drawing transitions per tool taken on the evaluation line."""
        return min(
            int(math.ceil(self.line_fraction * self.per_tool - 1e-9)),
            self.per_tool,
        )

    def to_data(self):
        return {
            "per_tool": self.per_tool,
            "random_probability": self.random_probability,
            "line_fraction": self.line_fraction,
            "line_length": self.line_length,
            "drawing_episode_length": self.drawing_episode_length,
            "random_episode_length": self.random_episode_length,
            "pivoting_episode_length": self.pivoting_episode_length,
            "width": self.width,
            "start_gap": self.start_gap,
            "drawing_feed": self.drawing_feed,
            "pivoting_feed": self.pivoting_feed,
            "contact_angle": self.contact_angle,
            "impedance": self.impedance,
            "observe": self.observe,
            "max_discarded": self.max_discarded,
        }

    @classmethod
    def from_data(cls, data):
        known = set(cls().to_data().keys())
        return cls(**{
            key: value
            for key, value in (data or {}).items()
            if key in known
        })


# --- Task setup ---
def task_sim_config(task, cfg=None):
    """Copy of a simulator config with the environment plane of a task."""
    point, normal = environment_plane(task)
    data = (cfg or SimConfig()).to_data()
    data["env_point"] = point.tolist()
    data["env_normal"] = normal.tolist()
    return SimConfig.from_data(data)


def task_contact_config(task, cfg=None):
    """Copy of a contact config with the environment plane of a task."""
    point, normal = environment_plane(task)
    data = (cfg or ContactConfig()).to_data()
    data["env_point"] = point.tolist()
    data["env_normal"] = normal.tolist()
    return ContactConfig.from_data(data)


def grasp_for_object(obj, relative):
    """World grasp (y, z, phi) holding an object at planar pose 'obj'."""
    return planar_compose(
        np.asarray(obj, dtype=np.float64),
        planar_inverse(np.asarray(relative, dtype=np.float64)),
    )


def drawing_start_state(tool, cfg, y, gap, theta, psi, width=GRASP_WIDTH):
    """Marker with its tip 'gap' below the board at line position 'y'.

    Args:
        tool (ToolShape): Held marker.
        cfg (SimConfig): Drawing simulator config.
        y (float): Tip position along the board.
        gap (float): Tip distance from the board, meters.
        theta (float): World marker angle.
        psi (float): In-hand angle.
        width (float): Gripper width.

    Returns:
        SimState: Fresh grasp.

    """
    tip = cfg.env_point_2d + gap * cfg.env_normal_2d
    tip[0] += y
    obj = tool_pose_for_tip(tip, tool.tip, theta)
    relative = np.array([0.0, 0.0, psi])
    return make_sim_state(grasp_for_object(obj, relative), relative, width)


def pivoting_start_state(tool, cfg, theta, psi, width=GRASP_WIDTH):
    """Tool at world angle 'theta' touching the table, in-hand angle 'psi'."""
    normal = cfg.env_normal_2d
    # lowest profile point along the plane normal, object frame direction
    lowest, _ = tool.support(rotation_2d(theta).T @ normal)
    offset = float(cfg.env_point_2d @ normal) - lowest
    obj = np.array([0.0, 0.0, theta])
    obj[:2] = offset * normal
    relative = np.array([0.0, 0.0, psi])
    return make_sim_state(grasp_for_object(obj, relative), relative, width)


def epsilon_greedy(
    action, box, rng, probability=RANDOM_ACTION_PROBABILITY
):
    """Policy action or, with 'probability', a uniform in-box action.

    Returns:
        tuple[Action4, bool]: Executed action and whether it was random.

    """
    if rng.uniform() < probability:
        return action_from_array(box.sample(rng)), True
    return action, False


class DataCollector(object):
    """Runs scripted episodes in the simulator and records transitions.

    Args:
        task (str): 'drawing' or 'pivoting'.
        cfg (Optional[CollectionConfig]): Collection parameters.
        sim_cfg (Optional[SimConfig]): Simulator parameters, the environment
            plane is replaced by the task plane.
        icp_cfg (Optional[IcpConfig]): Observation model alignment config.
        contact_cfg (Optional[ContactConfig]): Contact detection config.

    """

    def __init__(
        self, task, cfg=None, sim_cfg=None, icp_cfg=None, contact_cfg=None
    ):
        if task not in TASK_NAMES:
            raise ConfigError("Unknown task \"{}\"".format(task))
        self._task = task
        self._cfg = cfg or CollectionConfig()
        self._sim_cfg = task_sim_config(task, sim_cfg)
        self._icp_cfg = icp_cfg
        self._contact_cfg = task_contact_config(task, contact_cfg)
        self._canvas = DrawingCanvas(line_length=self._cfg.line_length)
        self._stats = collections.Counter()
        self._episode = 0
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
    def config(self):
        return self._cfg

    @property
    def sim_config(self):
        return self._sim_cfg

    @property
    def summary(self):
        """Counters of the last collection, stored in dataset manifests."""
        actions = self._stats["actions"]
        return {
            "task": self._task,
            "episodes": self._episode,
            "discarded": self._stats["discarded"],
            "random_actions": self._stats["random"],
            "random_fraction": (
                self._stats["random"] / actions if actions else 0.0
            ),
            "config": self._cfg.to_data(),
            "sim": self._sim_cfg.to_data(),
        }

    def collect(self, tools, rng):
        """Dataset with 'per_tool' transitions of every tool.

        Args:
            tools (list[ToolShape]): Tools to collect with.
            rng (np.random.Generator): Source of all randomness.

        Returns:
            Dataset: Collected transitions.

        Raises:
            ConfigError: No tools passed.
            CollectionError: Too many failed episodes for a tool.

        """
        if not tools:
            raise ConfigError("Data collection needs at least one tool")
        self._stats = collections.Counter()
        self._episode = 0
        dataset = Dataset(self._task)
        for tool in tools:
            self._collect_tool(dataset, tool, rng)
        return dataset

    def _collect_tool(self, dataset, tool, rng):
        sim = MembraneSimulator(tool, self._sim_cfg)
        object_model = tool.object_model()
        z_id = dataset.add_object(object_model)
        observer = None
        if self._cfg.observe:
            observer = ObservationModel(
                sim.cameras, self._icp_cfg, self._contact_cfg, rng
            )

        if self._task == TASK_DRAWING:
            line_count = self._cfg.line_transitions
            plan = (
                (self._line_episode, line_count),
                (self._random_line_episode, self._cfg.per_tool - line_count),
            )
        else:
            plan = ((self._pivoting_episode, self._cfg.per_tool), )

        start_size = len(dataset)
        discarded = 0
        for make_episode, target in plan:
            count = 0
            while count < target:
                state, policy, length = make_episode(sim, object_model, rng)
                result = self._run_episode(
                    sim, observer, object_model, state, policy, length, rng
                )
                if not result.records:
                    discarded += 1
                    self._stats["discarded"] += 1
                    self.log.warning(
                        "Discarded episode of \"{}\": {}".format(
                            tool.name, result.reason
                        )
                    )
                    if discarded > self._cfg.max_discarded:
                        self.log.error(
                            "Giving up on \"{}\"".format(tool.name)
                        )
                        raise CollectionError(tool.name, discarded)
                    continue
                for record in result.records[:target - count]:
                    s_t, action, s_next, extras = record
                    extras["episode"] = self._episode
                    dataset.add(Transition(s_t, z_id, action, s_next), extras)
                count += min(len(result.records), target - count)
                self._episode += 1

        self.log.info(
            "Collected {} transitions with \"{}\" ({} discarded episodes)"
            .format(len(dataset) - start_size, tool.name, discarded)
        )

    def _line_episode(self, sim, object_model, rng):
        cfg = self._cfg
        tool = sim.tool
        psi = rng.uniform(-cfg.drawing_feed, cfg.drawing_feed)
        state = drawing_start_state(
            tool, self._sim_cfg, 0.0, cfg.start_gap, 0.0, psi, cfg.width
        )
        goals = drawing_goal_sequence(self._canvas, object_model)
        box = drawing_action_box(cfg.impedance)
        line_end = float(self._canvas.line_end[1])

        def policy(state):
            tip = tool_tip_world(object_planar(state), tool.tip)
            if tip[0] >= line_end:
                return None
            goal = goals.goals[drawing_goal_index(goals, tool.tip, tip[0])]
            action = jacobian_policy_drawing(
                grasp_planar(state),
                relative_planar(state),
                state.width,
                goal,
                object_model.points,
                box,
            )
            action, is_random = epsilon_greedy(
                action, box, rng, cfg.random_probability
            )
            self._stats["random"] += int(is_random)
            return action

        return state, policy, cfg.drawing_episode_length

    def _random_line_episode(self, sim, object_model, rng):
        cfg = self._cfg
        state = drawing_start_state(
            sim.tool,
            self._sim_cfg,
            rng.uniform(*_RANDOM_LINE_START),
            rng.uniform(0.0, _RANDOM_LINE_GAP),
            rng.uniform(-cfg.drawing_feed, cfg.drawing_feed),
            rng.uniform(-cfg.drawing_feed, cfg.drawing_feed),
            cfg.width,
        )
        box = drawing_action_box(cfg.impedance)

        def policy(state):
            self._stats["random"] += 1
            return action_from_array(box.sample(rng))

        return state, policy, cfg.random_episode_length

    def _pivoting_episode(self, sim, object_model, rng):
        cfg = self._cfg
        theta = cfg.contact_angle * rng.choice([-1.0, 1.0])
        psi = rng.uniform(-cfg.pivoting_feed, cfg.pivoting_feed)
        state = pivoting_start_state(
            sim.tool, self._sim_cfg, theta, psi, cfg.width
        )

        def policy(state):
            box = pivoting_action_box(
                height_above_environment(state, self._sim_cfg)
            )
            self._stats["random"] += 1
            return action_from_array(box.sample(rng))

        return state, policy, cfg.pivoting_episode_length

    def _observe(self, observer, full, membrane, object_model, prior):
        if observer is None:
            return None
        try:
            return observer.observe_maps(
                full, membrane.w, membrane.r, object_model, prior
            )
        except ObservationError as exc:
            self.log.debug("Pose not observed: {}".format(exc))
            return None

    def _run_episode(
        self, sim, observer, object_model, state, policy, length, rng
    ):
        """Transitions of one episode, empty when the episode failed."""
        records = []
        try:
            # settle the fresh grasp before recording
            state = sim.step(state, Action4(state.width, 0.0, 0.0, 0.0))
            if state.dropped:
                return EpisodeResult([], "tool dropped while settling")
            prior = float(relative_planar(state)[2])
            membrane, full = sim.membrane_state(state, rng)
            q_obs = self._observe(
                observer, full, membrane, object_model, prior
            )
            for _ in range(length):
                action = policy(state)
                if action is None:
                    break
                self._stats["actions"] += 1
                next_state = sim.step(state, action)
                if next_state.dropped:
                    return EpisodeResult(
                        [], "tool dropped after {} steps".format(len(records))
                    )
                if q_obs is not None:
                    prior = float(planar_from_vector(q_obs)[0, 2])
                next_membrane, next_full = sim.membrane_state(next_state, rng)
                next_q_obs = self._observe(
                    observer, next_full, next_membrane, object_model, prior
                )
                records.append((membrane, action, next_membrane, {
                    "q_true_t": relative_planar(state),
                    "q_true_next": relative_planar(next_state),
                    "q_obs_t": q_obs,
                    "q_obs_next": next_q_obs,
                }))
                state = next_state
                membrane = next_membrane
                q_obs = next_q_obs
        except SolverError as exc:
            return EpisodeResult([], str(exc))
        return EpisodeResult(records, None)


def collect_drawing_data(sim_cfg, tools, rng, cfg=None, icp_cfg=None):
    """Drawing dataset from evaluation line and random line episodes."""
    collector = DataCollector(TASK_DRAWING, cfg, sim_cfg, icp_cfg)
    return collector.collect(tools, rng)


def collect_pivoting_data(sim_cfg, tools, rng, cfg=None, icp_cfg=None):
    """Pivoting dataset from random action episodes starting in contact."""
    collector = DataCollector(TASK_PIVOTING, cfg, sim_cfg, icp_cfg)
    return collector.collect(tools, rng)
