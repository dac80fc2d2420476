"""Closed-loop evaluation of dynamics models in the simulator.

A trial grasps a tool, runs the controller (or the pseudo random policy)
against the simulator and scores the outcome. Trials are seeded by run
seed, task, tool and trial index, so any subset can be rerun alone.
"""
import os
import csv
import math
import logging
import collections

import numpy as np

from .constants import (
    TASK_PIVOTING,
    TASK_NAMES,
    MODEL_KINDS,
    MODEL_TASKS,
    MODEL_RANDOM,
    TRIALS_PER_TOOL,
    PIVOTING_MAX_ACTIONS,
    PIVOTING_SUCCESS_BAND,
    PIVOTING_GOAL_RANGE,
    PIVOTING_WIDE_GOAL_RANGE,
    PIVOTING_FEED_ANGLE,
    PIVOTING_CONTACT_ANGLE,
    DRAWING_FEED_ANGLE,
    DRAWING_EPISODE_LENGTH,
    DRAWING_LINE_LENGTH,
    DRAWING_GOAL_SPACING,
    DRAWING_START_GAP,
    GRASP_WIDTH,
    IMPEDANCE_LIMIT,
)
from .baselines import pseudo_random_policy
from .collection import (
    task_sim_config,
    task_contact_config,
    drawing_start_state,
    pivoting_start_state,
)
from .controller import MppiConfig, CostConfig, MppiController
from .exceptions import (
    ConfigError,
    SolverError,
    ObservationError,
    ControllerError,
    InfeasibleActionError,
)
from .observation import ObservationModel
from .poses import (
    Action4,
    planar_from_vector,
    planar_to_vector,
    wrap_angle,
)
from .simulator import (
    MembraneSimulator,
    grasp_planar,
    object_planar,
    relative_planar,
    in_hand_angle,
    height_above_environment,
)
from .tasks import (
    DrawingCanvas,
    drawing_action_box,
    pivoting_action_box,
    drawing_goal_sequence,
    drawing_goal_index,
    pivoting_goal,
    pivoting_score,
    rasterize_ink,
    drawing_score,
    tool_tip_world,
)
from .tensor_io import write_pbm
from .utils import derive_rng, slugify_string, write_json

REASON_SUCCESS = "success"
REASON_OVERSHOOT = "overshoot"
REASON_DROPPED = "dropped"
REASON_MAX_ACTIONS = "max_actions"
REASON_GOAL_REACHED = "goal_reached"
REASON_SOLVER = "solver_error"
REASON_NO_ACTION = "no_action"

TrialResult = collections.namedtuple(
    "TrialResult",
    (
        "tool",
        "split",
        "trial",
        "seed",
        "score",
        "coverage",
        "reason",
        "steps",
    )
)
RESULT_FIELDS = TrialResult._fields


def check_model_task(kind, task):
    """Raise 'ConfigError' when model 'kind' is not evaluated on 'task'."""
    if task not in TASK_NAMES:
        raise ConfigError("Unknown task \"{}\"".format(task))
    if kind not in MODEL_KINDS:
        raise ConfigError("Unknown model kind \"{}\"".format(kind))
    if task not in MODEL_TASKS[kind]:
        raise ConfigError(
            "Model \"{}\" is only evaluated on {}".format(
                kind, ", ".join(sorted(MODEL_TASKS[kind]))
            )
        )


class EvalProtocol(object):
    """Trial protocol of both tasks.

    Goal angles and the success band are in degrees, like the pivoting
    score; grasp angles are in radians.

    Args:
        trials (int): Trials per tool.
        max_actions (int): Pivoting action budget.
        success_band (float): Pivoting success band, degrees.
        goal_range (float): Pivoting goals are uniform in +-'goal_range'.
        wide_goals (bool): Use the wide goal range instead.
        feed_angle (float): Largest initial in-hand angle when pivoting.
        contact_angle (float): World tool angle at the pivoting start.
        drawing_feed (float): Largest initial in-hand marker angle.
        drawing_max_steps (int): Drawing step cap (workspace limit).
        line_length (float): Drawing line length, meters.
        start_gap (float): Marker tip distance below the board at start.
        width (float): Gripper width of the initial grasp.
        impedance (float): Drawing pressing bound, meters.

    """

    def __init__(
        self,
        trials=TRIALS_PER_TOOL,
        max_actions=PIVOTING_MAX_ACTIONS,
        success_band=PIVOTING_SUCCESS_BAND,
        goal_range=PIVOTING_GOAL_RANGE,
        wide_goals=False,
        feed_angle=PIVOTING_FEED_ANGLE,
        contact_angle=PIVOTING_CONTACT_ANGLE,
        drawing_feed=DRAWING_FEED_ANGLE,
        drawing_max_steps=DRAWING_EPISODE_LENGTH,
        line_length=DRAWING_LINE_LENGTH,
        start_gap=DRAWING_START_GAP,
        width=GRASP_WIDTH,
        impedance=IMPEDANCE_LIMIT,
    ):
        if trials < 1:
            raise ConfigError("At least one trial per tool is needed")
        if max_actions < 1 or drawing_max_steps < 1:
            raise ConfigError("Trials need at least one action")
        if success_band <= 0.0:
            raise ConfigError("Success band must be positive")
        self.trials = int(trials)
        self.max_actions = int(max_actions)
        self.success_band = float(success_band)
        self.goal_range = float(goal_range)
        self.wide_goals = bool(wide_goals)
        self.feed_angle = float(feed_angle)
        self.contact_angle = float(contact_angle)
        self.drawing_feed = float(drawing_feed)
        self.drawing_max_steps = int(drawing_max_steps)
        self.line_length = float(line_length)
        self.start_gap = float(start_gap)
        self.width = float(width)
        self.impedance = float(impedance)

    @property
    def goal_limit(self):
        if self.wide_goals:
            return PIVOTING_WIDE_GOAL_RANGE
        return self.goal_range

    def to_data(self):
        return {
            "trials": self.trials,
            "max_actions": self.max_actions,
            "success_band": self.success_band,
            "goal_range": self.goal_range,
            "wide_goals": self.wide_goals,
            "feed_angle": self.feed_angle,
            "contact_angle": self.contact_angle,
            "drawing_feed": self.drawing_feed,
            "drawing_max_steps": self.drawing_max_steps,
            "line_length": self.line_length,
            "start_gap": self.start_gap,
            "width": self.width,
            "impedance": self.impedance,
        }

    @classmethod
    def from_data(cls, data):
        known = set(cls().to_data().keys())
        return cls(**{
            key: value
            for key, value in (data or {}).items()
            if key in known
        })


def _tip_point(state, tool):
    tip = tool_tip_world(object_planar(state), tool.tip)
    return np.array([0.0, tip[0], tip[1]])


def _signed_error(goal_deg, achieved_deg):
    return math.degrees(wrap_angle(math.radians(goal_deg - achieved_deg)))


class Evaluator(object):
    """Runs seeded trials of one model on one task.

    Args:
        task (str): Task name.
        kind (str): Model kind, 'random' runs the pseudo random policy.
        model (Optional[StepModel]): Loaded model, None for 'random'.
        protocol (Optional[EvalProtocol]): Trial protocol.
        mppi_cfg (Optional[MppiConfig]): Controller config.
        cost_cfg (Optional[CostConfig]): Cost config.
        sim_cfg (Optional[SimConfig]): Simulator config, the environment
            plane is replaced by the task plane.
        icp_cfg (Optional[IcpConfig]): Observation alignment config.
        contact_cfg (Optional[ContactConfig]): Contact detection config.
        seed (int): Run seed.
        output_dir (Optional[str]): Directory for controller traces and
            drawing masks, nothing is written when not set.

    """

    def __init__(
        self,
        task,
        kind,
        model=None,
        protocol=None,
        mppi_cfg=None,
        cost_cfg=None,
        sim_cfg=None,
        icp_cfg=None,
        contact_cfg=None,
        seed=0,
        output_dir=None,
    ):
        check_model_task(kind, task)
        if model is None and kind != MODEL_RANDOM:
            raise ConfigError(
                "Model \"{}\" must be loaded before evaluation".format(kind)
            )
        self._task = task
        self._kind = kind
        self._model = model
        self._protocol = protocol or EvalProtocol()
        self._mppi_cfg = mppi_cfg or MppiConfig()
        self._cost_cfg = cost_cfg or CostConfig()
        self._sim_cfg = task_sim_config(task, sim_cfg)
        self._icp_cfg = icp_cfg
        self._contact_cfg = task_contact_config(task, contact_cfg)
        self._seed = int(seed)
        self._output_dir = output_dir
        self._log = None

    @property
    def log(self):
        if self._log is None:
            self._log = logging.getLogger(self.__class__.__name__)
        return self._log

    @property
    def protocol(self):
        return self._protocol

    def run(self, train_tools, test_tools=()):
        """Every trial of every tool, train tools first.

        Returns:
            list[TrialResult]: One row per trial.

        """
        rows = []
        for split, tools in (("train", train_tools), ("test", test_tools)):
            for tool in tools:
                for trial in range(self._protocol.trials):
                    rows.append(self.run_trial(tool, trial, split))
        return rows

    def run_trial(self, tool, trial, split="train"):
        """Single seeded trial.

        Args:
            tool (ToolShape): Grasped tool.
            trial (int): Trial index.
            split (str): 'train' or 'test' tool set label.

        Returns:
            TrialResult: Outcome row.

        """
        rng = derive_rng(self._seed, self._task, tool.name, trial)
        sim = MembraneSimulator(tool, self._sim_cfg)
        object_model = tool.object_model()
        observer = ObservationModel(
            sim.cameras, self._icp_cfg, self._contact_cfg, rng
        )
        controller = None
        if self._model is not None:
            controller = MppiController(
                self._model, observer, object_model,
                self._mppi_cfg, self._cost_cfg, rng,
            )
        if self._task == TASK_PIVOTING:
            score, coverage, reason, steps = self._pivoting_trial(
                sim, object_model, observer, controller, rng
            )
        else:
            score, coverage, reason, steps = self._drawing_trial(
                sim, object_model, observer, controller, rng, trial
            )
        if controller is not None and self._output_dir:
            controller.write_trace(
                self._output_path(tool, trial, "trace", "csv")
            )
        result = TrialResult(
            tool.name, split, int(trial), self._seed,
            float(score), float(coverage), reason, int(steps),
        )
        self.log.info(
            "Trial {} of \"{}\": score {:.4g} ({}, {} steps)".format(
                trial, tool.name, result.score, reason, steps
            )
        )
        return result

    def _output_path(self, tool, trial, label, ext):
        os.makedirs(self._output_dir, exist_ok=True)
        name = "{}_{}_{:03d}_{}.{}".format(
            self._task, slugify_string(tool.name), trial, label, ext
        )
        return os.path.join(self._output_dir, name)

    def _estimate(self, observer, full, membrane, object_model, previous):
        prior = float(planar_from_vector(previous)[0, 2])
        try:
            return observer.observe_maps(
                full, membrane.w, membrane.r, object_model, prior
            )
        except ObservationError as exc:
            self.log.warning(
                "Keeping previous pose estimate of \"{}\": {}".format(
                    object_model.name, exc
                )
            )
            return previous

    def _act(self, controller, membrane, q, goal, frame, box, rng, y_limit):
        if controller is None:
            return pseudo_random_policy(
                self._task, membrane.r, box, rng, y_limit
            )
        return controller.control_step(membrane, q, goal, frame, box)

    def _settle(self, sim, state):
        return sim.step(state, Action4(state.width, 0.0, 0.0, 0.0))

    def _start(self, sim, state):
        """Settled initial state and the failure reason, if any."""
        try:
            state = self._settle(sim, state)
        except SolverError as exc:
            self.log.warning("Initial grasp failed: {}".format(exc))
            return state, REASON_SOLVER
        if state.dropped:
            return state, REASON_DROPPED
        return state, None

    def _pivoting_trial(self, sim, object_model, observer, controller, rng):
        protocol = self._protocol
        cfg = sim.config
        theta = protocol.contact_angle * rng.choice([-1.0, 1.0])
        psi = rng.uniform(-protocol.feed_angle, protocol.feed_angle)
        goal_deg = rng.uniform(-protocol.goal_limit, protocol.goal_limit)
        state = pivoting_start_state(
            sim.tool, cfg, theta, psi, protocol.width
        )
        achieved = math.degrees(psi)
        state, reason = self._start(sim, state)
        if reason is not None:
            return pivoting_score(achieved, goal_deg), 0.0, reason, 0

        # the grasp is known when the trial starts
        q = planar_to_vector(relative_planar(state))[0]
        achieved = math.degrees(in_hand_angle(state))
        start_sign = np.sign(_signed_error(goal_deg, achieved))
        goal_spec = None
        reason = REASON_MAX_ACTIONS
        steps = 0
        if controller is not None:
            controller.reset(pivoting_action_box(
                height_above_environment(state, cfg)
            ))
        while steps < protocol.max_actions:
            if pivoting_score(achieved, goal_deg) <= protocol.success_band:
                reason = REASON_SUCCESS
                break
            membrane, full = sim.membrane_state(state, rng)
            q = self._estimate(observer, full, membrane, object_model, q)
            if goal_spec is None:
                position = planar_from_vector(q)[0, :2]
                goal_spec = pivoting_goal(position, math.radians(goal_deg))
            box = pivoting_action_box(height_above_environment(state, cfg))
            try:
                action = self._act(
                    controller, membrane, q, goal_spec.goals[0],
                    goal_spec.frame, box, rng, None,
                )
                next_state = sim.step(state, action)
            except (ControllerError, InfeasibleActionError) as exc:
                self.log.warning("No action: {}".format(exc))
                reason = REASON_NO_ACTION
                break
            except SolverError as exc:
                self.log.warning("Simulation failed: {}".format(exc))
                reason = REASON_SOLVER
                break
            steps += 1
            if next_state.dropped:
                # scored from the last stable pose
                reason = REASON_DROPPED
                break
            state = next_state
            achieved = math.degrees(in_hand_angle(state))
            error = _signed_error(goal_deg, achieved)
            if abs(error) <= protocol.success_band:
                reason = REASON_SUCCESS
                break
            if np.sign(error) != start_sign:
                reason = REASON_OVERSHOOT
                break
        return pivoting_score(achieved, goal_deg), 0.0, reason, steps

    def _drawing_trial(
        self, sim, object_model, observer, controller, rng, trial
    ):
        protocol = self._protocol
        tool = sim.tool
        canvas = DrawingCanvas(line_length=protocol.line_length)
        psi = rng.uniform(-protocol.drawing_feed, protocol.drawing_feed)
        state = drawing_start_state(
            tool, sim.config, 0.0, protocol.start_gap, 0.0, psi,
            protocol.width,
        )
        tips = [_tip_point(state, tool)]
        state, reason = self._start(sim, state)
        steps = 0
        if reason is None:
            tips.append(_tip_point(state, tool))
            reason, steps = self._draw_line(
                sim, object_model, observer, controller, rng, canvas,
                state, tips,
            )

        mask = rasterize_ink(np.array(tips), canvas)
        score, coverage = drawing_score(mask, canvas.goal_mask())
        if self._output_dir:
            write_pbm(self._output_path(tool, trial, "ink", "pbm"), mask)
        return score, coverage, reason, steps

    def _draw_line(
        self, sim, object_model, observer, controller, rng, canvas, state,
        tips,
    ):
        """Drive the marker along the line, appending true tip positions.

        Returns:
            tuple[str, int]: Termination reason and executed steps.

        """
        protocol = self._protocol
        tool = sim.tool
        goal_spec = drawing_goal_sequence(canvas, object_model)
        box = drawing_action_box(protocol.impedance)
        line_end = float(canvas.line_end[1])
        q = planar_to_vector(relative_planar(state))[0]
        if controller is not None:
            controller.reset(box)

        steps = 0
        while steps < protocol.drawing_max_steps:
            tip_y = float(tips[-1][1])
            if tip_y >= line_end:
                return REASON_GOAL_REACHED, steps
            membrane, full = sim.membrane_state(state, rng)
            q = self._estimate(observer, full, membrane, object_model, q)
            goal = goal_spec.goals[
                drawing_goal_index(goal_spec, tool.tip, tip_y)
            ]
            # grasp may move until the tip is one goal past the line end
            y_limit = float(grasp_planar(state)[0]) + max(
                line_end - tip_y, 0.0
            ) + DRAWING_GOAL_SPACING
            try:
                action = self._act(
                    controller, membrane, q, goal, goal_spec.frame, box,
                    rng, y_limit,
                )
                next_state = sim.step(state, action)
            except (ControllerError, InfeasibleActionError) as exc:
                self.log.warning("No action: {}".format(exc))
                return REASON_NO_ACTION, steps
            except SolverError as exc:
                self.log.warning("Simulation failed: {}".format(exc))
                return REASON_SOLVER, steps
            steps += 1
            if next_state.dropped:
                return REASON_DROPPED, steps
            state = next_state
            tips.append(_tip_point(state, tool))
        if tips[-1][1] >= line_end:
            return REASON_GOAL_REACHED, steps
        return REASON_MAX_ACTIONS, steps


def run_evaluation(
    task, kind, model, protocol, seed, train_tools, test_tools=(), **kwargs
):
    """Rows of all trials, see 'Evaluator' for the keyword arguments."""
    evaluator = Evaluator(
        task, kind, model, protocol, seed=seed, **kwargs
    )
    return evaluator.run(train_tools, test_tools)


# --- Results ---
def _statistics(scores):
    scores = np.asarray(scores, dtype=np.float64)
    std = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    return {
        "n": int(len(scores)),
        "mean": float(np.mean(scores)),
        "std": std,
    }


def summarize_results(rows):
    """Mean and sample std of the score per tool and per tool set.

    Returns:
        dict[str, Any]: 'tools' and 'splits' statistics, 'coverage' per
            split and termination reason counts.

    """
    by_tool = collections.OrderedDict()
    by_split = collections.OrderedDict()
    coverage = collections.OrderedDict()
    reasons = collections.Counter()
    for row in rows:
        by_tool.setdefault(row.tool, []).append(row.score)
        by_split.setdefault(row.split, []).append(row.score)
        coverage.setdefault(row.split, []).append(row.coverage)
        reasons[row.reason] += 1
    return {
        "tools": {
            name: _statistics(scores) for name, scores in by_tool.items()
        },
        "splits": {
            name: _statistics(scores) for name, scores in by_split.items()
        },
        "coverage": {
            name: _statistics(values) for name, values in coverage.items()
        },
        "reasons": dict(reasons),
        "n_trials": len(rows),
    }


def write_results_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream)
        writer.writerow(RESULT_FIELDS)
        for row in rows:
            writer.writerow([
                repr(value) if isinstance(value, float) else value
                for value in row
            ])


def read_results_csv(path):
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as stream:
        for record in csv.DictReader(stream):
            rows.append(TrialResult(
                record["tool"],
                record["split"],
                int(record["trial"]),
                int(record["seed"]),
                float(record["score"]),
                float(record["coverage"]),
                record["reason"],
                int(record["steps"]),
            ))
    return rows


def write_summary(path, summary):
    write_json(path, summary)


def format_summary(summary):
    """Plain text table of per-tool and per-set statistics."""
    lines = ["{:<20} {:>4} {:>10} {:>10}".format("tool", "n", "mean", "std")]
    for section in ("tools", "splits"):
        for name, stats in summary[section].items():
            lines.append("{:<20} {:>4} {:>10.4f} {:>10.4f}".format(
                name, stats["n"], stats["mean"], stats["std"]
            ))
    return "\n".join(lines)
