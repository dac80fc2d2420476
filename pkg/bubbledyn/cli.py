"""Command line entry point.

Subcommands mirror the experiment workflow: 'collect' simulator data,
'train' the autoencoder and then a dynamics model, 'eval' a model in
closed loop, 'score-drawing' for stored ink masks, 'render' membrane
images of a scenario and 'sim-rollout' for quick simulator inspection.
All tunables come from one JSON run config; flags override single fields.
"""
import os
import sys
import json
import math
import logging
import argparse

import numpy as np

from .version import __version__
from .constants import (
    TASK_NAMES,
    TASK_DRAWING,
    TASK_PIVOTING,
    MODEL_KINDS,
    MODEL_OBJPOSE,
    MANIFEST_NAME,
    DRAWING_LINE_LENGTH,
)
from .baselines import load_step_model
from .collection import (
    DataCollector,
    task_sim_config,
    drawing_start_state,
    pivoting_start_state,
)
from .config import RunConfig
from .dataset import Dataset, merge_datasets
from .evaluation import (
    Evaluator,
    summarize_results,
    write_results_csv,
    write_summary,
    format_summary,
)
from .exceptions import BubbleDynError, ConfigError, ObservationError
from .models import (
    TactileAutoencoder,
    ObjectEncoder,
    save_checkpoint,
    load_checkpoint,
)
from .observation import ObservationModel, imprint_mask
from .poses import (
    Action4,
    action_from_array,
    planar_from_vector,
    wrench_to_vector,
)
from .simulator import (
    MembraneSimulator,
    relative_planar,
    height_above_environment,
    save_scenario,
    load_scenario,
)
from .tasks import (
    DrawingCanvas,
    drawing_action_box,
    pivoting_action_box,
    drawing_score,
)
from .tensor_io import write_pgm, write_pbm, read_pbm
from .tool_shapes import find_tool
from .training import TrainConfig, AutoencoderTrainer, DynamicsTrainer
from .utils import derive_rng, get_default_log_level, write_json

STAGE_AUTOENCODER = "autoencoder"
STAGE_DYNAMICS = "dynamics"
REPORT_NAME = "report.json"

log = logging.getLogger("bubbledyn")


# --- Commands ---
def cmd_collect(config):
    """Collect a dataset with the train tools of the configured task.

    Returns:
        str: Dataset directory.

    """
    train_tools, _ = config.tools()
    seed = config.run_seed
    collector = DataCollector(
        config.task, config.collection, config.sim, config.icp, config.contact
    )
    dataset = collector.collect(
        train_tools, derive_rng(seed, config.task, "collect")
    )
    dataset.save(config.dataset_dir, {
        "collection": collector.summary,
        "seed": seed,
    })
    return config.dataset_dir


def _load_datasets(config):
    datasets = []
    for path in config.datasets:
        try:
            datasets.append(Dataset.load(path))
        except FileNotFoundError:
            raise ConfigError(
                "Dataset \"{}\" does not exist, run 'collect' first".format(
                    path
                )
            )
    return datasets


def _train_config(config):
    data = config.train.to_data()
    data["seed"] = config.run_seed
    return TrainConfig.from_data(data)


def cmd_train(config, stage):
    """Train one stage and store its checkpoint with a training report.

    The autoencoder stage also pretrains the object encoder; the dynamics
    stage needs its checkpoint.

    Returns:
        str: Checkpoint directory.

    """
    train_cfg = _train_config(config)
    datasets = _load_datasets(config)
    if stage == STAGE_AUTOENCODER:
        trainer = AutoencoderTrainer(train_cfg)
        autoencoder, progress = trainer.train(datasets)
        encoder, pretrain = trainer.pretrain_object_encoder()
        report = {
            "stage": stage,
            "datasets": list(config.datasets),
            "train": train_cfg.to_data(),
            "progress": progress.to_data(),
            "pretrain": None if pretrain is None else pretrain.to_data(),
        }
        dirpath = config.autoencoder_path
        save_checkpoint(
            dirpath,
            {"autoencoder": autoencoder, "object_encoder": encoder},
            STAGE_AUTOENCODER,
            report,
        )
        write_json(os.path.join(dirpath, REPORT_NAME), report)
        return dirpath

    if stage != STAGE_DYNAMICS:
        raise ConfigError("Unknown training stage \"{}\"".format(stage))
    if not config.needs_checkpoint:
        raise ConfigError(
            "Model \"{}\" has no trainable dynamics".format(config.model)
        )
    ae_path = config.autoencoder_path
    if not os.path.exists(os.path.join(ae_path, MANIFEST_NAME)):
        raise ConfigError(
            "Autoencoder checkpoint \"{}\" is missing, run"
            " 'train --stage autoencoder' before"
            " 'train --stage dynamics'".format(ae_path)
        )
    autoencoder = TactileAutoencoder()
    encoder = ObjectEncoder()
    load_checkpoint(
        ae_path, {"autoencoder": autoencoder, "object_encoder": encoder}
    )
    dataset = merge_datasets(datasets, config.task)
    trainer = DynamicsTrainer(config.model, train_cfg)
    net, encoder, progress = trainer.train(
        dataset,
        encoder,
        None if config.model == MODEL_OBJPOSE else autoencoder,
    )
    report = {
        "stage": stage,
        "kind": config.model,
        "datasets": list(config.datasets),
        "train": train_cfg.to_data(),
        "alphas": [
            train_cfg.tactile_weight,
            train_cfg.wrench_weight,
            train_cfg.pose_weight,
        ],
        "progress": progress.to_data(),
    }
    dirpath = config.model_path
    save_checkpoint(
        dirpath, {"net": net, "object_encoder": encoder}, config.model, report
    )
    write_json(os.path.join(dirpath, REPORT_NAME), report)
    return dirpath


def cmd_eval(config, traces=False):
    """Evaluate the configured model on train and test tools.

    Returns:
        dict[str, Any]: Result summary, also stored next to the CSV.

    """
    config.validate()
    model_dir = None
    autoencoder_dir = None
    if config.needs_checkpoint:
        model_dir = config.model_path
        if config.model != MODEL_OBJPOSE:
            autoencoder_dir = config.autoencoder_path
    model = load_step_model(config.model, autoencoder_dir, model_dir)
    train_tools, test_tools = config.tools()
    results_dir = config.results_path
    os.makedirs(results_dir, exist_ok=True)
    evaluator = Evaluator(
        config.task,
        config.model,
        model,
        config.protocol,
        config.mppi,
        config.cost,
        config.sim,
        config.icp,
        config.contact,
        seed=config.run_seed,
        output_dir=os.path.join(results_dir, "trials") if traces else None,
    )
    rows = evaluator.run(train_tools, test_tools)
    summary = summarize_results(rows)
    summary["task"] = config.task
    summary["model"] = config.model
    summary["seed"] = config.run_seed
    write_results_csv(os.path.join(results_dir, "results.csv"), rows)
    write_summary(os.path.join(results_dir, "summary.json"), summary)
    return summary


def cmd_score_drawing(measured_path, goal_path=None,
                      line_length=DRAWING_LINE_LENGTH):
    """Scores of a stored ink mask against a goal mask or the goal line."""
    for path in (measured_path, goal_path):
        if path is not None and not os.path.exists(path):
            raise ConfigError("Mask \"{}\" does not exist".format(path))
    measured = read_pbm(measured_path)
    if goal_path is None:
        goal = DrawingCanvas(line_length=line_length).goal_mask()
    else:
        goal = read_pbm(goal_path)
    score, coverage = drawing_score(measured, goal)
    return {"score": score, "coverage": coverage}


def _scenario(config, scenario_path, tool_name):
    """Tool, simulator config and settled state of a scenario."""
    if scenario_path is not None:
        if not os.path.exists(scenario_path):
            raise ConfigError(
                "Scenario \"{}\" does not exist".format(scenario_path)
            )
        return load_scenario(scenario_path)
    if tool_name is None:
        train_tools, _ = config.tools()
        tool = train_tools[0]
    else:
        try:
            tool = find_tool(tool_name)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]))
    sim_cfg = task_sim_config(config.task, config.sim)
    collection = config.collection
    if config.task == TASK_PIVOTING:
        state = pivoting_start_state(
            tool, sim_cfg, collection.contact_angle, 0.0, collection.width
        )
    else:
        state = drawing_start_state(
            tool, sim_cfg, 0.0, collection.start_gap, 0.0, 0.0,
            collection.width,
        )
    sim = MembraneSimulator(tool, sim_cfg)
    state = sim.step(state, Action4(state.width, 0.0, 0.0, 0.0))
    return tool, sim_cfg, state


def cmd_render(config, output_dir, scenario_path=None, tool_name=None):
    """Write noise free deformation maps (PGM) and imprint masks (PBM).

    Returns:
        list[str]: Written files.

    """
    tool, sim_cfg, state = _scenario(config, scenario_path, tool_name)
    os.makedirs(output_dir, exist_ok=True)
    written = []
    if scenario_path is None:
        path = os.path.join(output_dir, "scenario.json")
        save_scenario(path, tool, sim_cfg, state)
        written.append(path)
    maps = MembraneSimulator(tool, sim_cfg).render(state)
    masks = imprint_mask(maps)
    for index, side in enumerate(("left", "right")):
        path = os.path.join(output_dir, "{}.pgm".format(side))
        write_pgm(path, np.clip(maps[index], 0.0, None))
        written.append(path)
        path = os.path.join(output_dir, "{}_imprint.pbm".format(side))
        write_pbm(path, masks[index])
        written.append(path)
    return written


def cmd_sim_rollout(
    config, scenario_path=None, tool_name=None, steps=5, repeats=0
):
    """Random in-box actions from a scenario and observation spread.

    Returns:
        dict[str, Any]: Per-step true in-hand poses and wrenches, and the
            spread of observed in-hand angles over 'repeats' noisy renders
            of the final state.

    """
    tool, sim_cfg, state = _scenario(config, scenario_path, tool_name)
    sim = MembraneSimulator(tool, sim_cfg)
    rng = derive_rng(config.run_seed, "sim-rollout", tool.name)
    rows = []
    for step in range(steps):
        if config.task == TASK_DRAWING:
            box = drawing_action_box(config.collection.impedance)
        else:
            box = pivoting_action_box(height_above_environment(state, sim_cfg))
        action = action_from_array(box.sample(rng))
        state = sim.step(state, action)
        relative = relative_planar(state)
        rows.append({
            "step": step,
            "action": list(action),
            "relative": [
                relative[0], relative[1], math.degrees(relative[2])
            ],
            "wrench": wrench_to_vector(sim.wrench(state)).tolist(),
            "dropped": state.dropped,
        })
        if state.dropped:
            break

    report = {"tool": tool.name, "steps": rows}
    if repeats > 0 and not state.dropped:
        observer = ObservationModel(
            sim.cameras, config.icp, config.contact, rng
        )
        object_model = tool.object_model()
        truth = float(relative_planar(state)[2])
        angles = []
        failures = 0
        for _ in range(repeats):
            membrane, full = sim.membrane_state(state, rng)
            try:
                q = observer.observe_maps(
                    full, membrane.w, membrane.r, object_model, truth
                )
            except ObservationError:
                failures += 1
                continue
            angles.append(math.degrees(planar_from_vector(q)[0, 2]))
        report["observation"] = {
            "true_angle": math.degrees(truth),
            "mean_angle": float(np.mean(angles)) if angles else None,
            "std_angle": float(np.std(angles)) if angles else None,
            "failures": failures,
        }
    return report


# --- Parser ---
def _add_common(parser):
    parser.add_argument("--config", help="Run config JSON file")
    parser.add_argument("--task", choices=TASK_NAMES)
    parser.add_argument("--model", choices=MODEL_KINDS)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--root", help="Artifacts root directory")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="Debug logging"
    )
    parser.add_argument(
        "-q", "--quiet", action="store_true", help="Warnings only"
    )


def _add_scenario(parser):
    parser.add_argument("--scenario", help="Scenario JSON file")
    parser.add_argument("--tool", help="Tool name, default first train tool")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bubbledyn",
        description="Learned soft membrane dynamics for tool manipulation",
    )
    parser.add_argument(
        "--version", action="version", version=__version__
    )
    subparsers = parser.add_subparsers(dest="command")
    subparsers.required = True

    collect = subparsers.add_parser("collect", help="Collect simulator data")
    _add_common(collect)
    collect.add_argument("--tools", type=int, help="Use first N train tools")
    collect.add_argument("--per-tool", type=int, dest="per_tool")
    collect.add_argument("--output", help="Dataset directory")
    collect.add_argument(
        "--no-observe", action="store_true",
        help="Skip observation model poses",
    )

    train = subparsers.add_parser("train", help="Train a model stage")
    _add_common(train)
    train.add_argument(
        "--stage",
        choices=(STAGE_AUTOENCODER, STAGE_DYNAMICS),
        required=True,
    )
    train.add_argument(
        "--dataset", action="append", dest="datasets",
        help="Dataset directory, repeat for several",
    )
    train.add_argument("--autoencoder", help="Autoencoder checkpoint")
    train.add_argument("--output", help="Checkpoint directory")
    train.add_argument("--epochs", type=int)
    train.add_argument(
        "--pretrain-epochs", type=int, dest="pretrain_epochs"
    )

    evaluate = subparsers.add_parser("eval", help="Evaluate in closed loop")
    _add_common(evaluate)
    evaluate.add_argument("--trials", type=int)
    evaluate.add_argument("--tools", type=int, help="Use first N train tools")
    evaluate.add_argument(
        "--test-tools", type=int, dest="test_tools",
        help="Use first N test tools",
    )
    evaluate.add_argument("--autoencoder", help="Autoencoder checkpoint")
    evaluate.add_argument("--checkpoint", help="Dynamics checkpoint")
    evaluate.add_argument("--output", help="Results directory")
    evaluate.add_argument(
        "--wide-goals", action="store_true", dest="wide_goals"
    )
    evaluate.add_argument(
        "--traces", action="store_true",
        help="Store controller traces and ink masks per trial",
    )

    score = subparsers.add_parser(
        "score-drawing", help="Score a stored ink mask"
    )
    score.add_argument("measured", help="Ink mask PBM")
    score.add_argument("--goal", help="Goal mask PBM, default goal line")
    score.add_argument(
        "--line-length", type=float, default=DRAWING_LINE_LENGTH,
        dest="line_length",
    )
    score.add_argument("-v", "--verbose", action="store_true")
    score.add_argument("-q", "--quiet", action="store_true")

    render = subparsers.add_parser("render", help="Render membrane images")
    _add_common(render)
    _add_scenario(render)
    render.add_argument("--output", required=True, help="Output directory")

    rollout = subparsers.add_parser(
        "sim-rollout", help="Random simulator rollout of a scenario"
    )
    _add_common(rollout)
    _add_scenario(rollout)
    rollout.add_argument("--steps", type=int, default=5)
    rollout.add_argument(
        "--repeats", type=int, default=0,
        help="Noisy observations of the final state",
    )
    return parser


def _first_names(tools, count):
    return [tool.name for tool in tools[:count]]


def build_config(args):
    """Run config from the config file and command line overrides."""
    config = RunConfig()
    if getattr(args, "config", None):
        config = RunConfig.load(args.config)
    for key in ("task", "model", "seed", "root"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)

    config.validate()
    command = args.command
    output = getattr(args, "output", None)
    train_tools, test_tools = config.tools()
    if getattr(args, "tools", None) is not None:
        config.train_tools = _first_names(train_tools, args.tools)
    if getattr(args, "test_tools", None) is not None:
        config.test_tools = _first_names(test_tools, args.test_tools)

    if command == "collect":
        if args.per_tool is not None:
            config.collection.per_tool = args.per_tool
        if args.no_observe:
            config.collection.observe = False
        if output:
            config.dataset_dirs = [output]
    elif command == "train":
        if args.datasets:
            config.dataset_dirs = list(args.datasets)
        if args.autoencoder:
            config.autoencoder_dir = args.autoencoder
        if args.epochs is not None:
            config.train.max_epochs = args.epochs
        if args.pretrain_epochs is not None:
            config.train.pretrain_epochs = args.pretrain_epochs
        if output:
            if args.stage == STAGE_AUTOENCODER:
                config.autoencoder_dir = output
            else:
                config.model_dir = output
    elif command == "eval":
        if args.trials is not None:
            config.protocol.trials = args.trials
        if args.wide_goals:
            config.protocol.wide_goals = True
        if args.autoencoder:
            config.autoencoder_dir = args.autoencoder
        if args.checkpoint:
            config.model_dir = args.checkpoint
        if output:
            config.results_dir = output
    return config.validate()


def configure_logging(verbose=False, quiet=False):
    level = get_default_log_level()
    if verbose:
        level = "DEBUG"
    elif quiet:
        level = "WARNING"
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        if args.command == "score-drawing":
            result = cmd_score_drawing(
                args.measured, args.goal, args.line_length
            )
            print(json.dumps(result, sort_keys=True))
            return 0

        config = build_config(args)
        if args.command == "collect":
            path = cmd_collect(config)
            log.info("Dataset stored to \"{}\"".format(path))
        elif args.command == "train":
            path = cmd_train(config, args.stage)
            log.info("Checkpoint stored to \"{}\"".format(path))
        elif args.command == "eval":
            summary = cmd_eval(config, args.traces)
            print(format_summary(summary))
        elif args.command == "render":
            for path in cmd_render(
                config, args.output, args.scenario, args.tool
            ):
                print(path)
        elif args.command == "sim-rollout":
            report = cmd_sim_rollout(
                config, args.scenario, args.tool, args.steps, args.repeats
            )
            print(json.dumps(report, indent=2, sort_keys=True))
    except BubbleDynError as exc:
        log.error(str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
