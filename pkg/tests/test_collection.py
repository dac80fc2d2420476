import math

import numpy as np
import pytest

from bubbledyn.constants import TASK_DRAWING, TASK_PIVOTING
from bubbledyn.exceptions import ConfigError
from bubbledyn.poses import Action4, action_to_array, rotation_2d
from bubbledyn.simulator import SimConfig, object_planar, relative_planar
from bubbledyn.tasks import drawing_action_box, tool_tip_world
from bubbledyn.tool_shapes import find_tool
from bubbledyn.collection import (
    CollectionConfig,
    DataCollector,
    task_sim_config,
    task_contact_config,
    grasp_for_object,
    drawing_start_state,
    pivoting_start_state,
    epsilon_greedy,
)


def test_epsilon_greedy_rate(rng):
    box = drawing_action_box()
    policy_action = Action4(0.025, 0.01, 0.0, 0.0)
    random_count = 0
    draws = 10000
    for _ in range(draws):
        action, is_random = epsilon_greedy(policy_action, box, rng, 0.15)
        if is_random:
            random_count += 1
            assert box.contains(action_to_array(action))
        else:
            assert action == policy_action
    assert abs(random_count / draws - 0.15) < 0.02


def test_epsilon_greedy_extremes(rng):
    box = drawing_action_box()
    action = Action4(0.025, 0.01, 0.0, 0.0)
    assert epsilon_greedy(action, box, rng, 0.0) == (action, False)
    _, is_random = epsilon_greedy(action, box, rng, 1.0)
    assert is_random


def test_task_configs_take_task_plane():
    sim_cfg = task_sim_config(TASK_PIVOTING, SimConfig(stiffness=0.5))
    np.testing.assert_allclose(sim_cfg.env_normal, [0.0, 0.0, 1.0])
    assert sim_cfg.stiffness == 0.5

    contact_cfg = task_contact_config(TASK_DRAWING)
    np.testing.assert_allclose(contact_cfg.env_normal, [0.0, 0.0, -1.0])


def test_grasp_for_object_inverts_relative():
    obj = np.array([0.01, -0.12, 0.4])
    relative = np.array([0.003, -0.02, -0.3])
    grasp = grasp_for_object(obj, relative)
    # grasp * relative recovers the object
    position = rotation_2d(grasp[2]) @ relative[:2] + grasp[:2]
    np.testing.assert_allclose(position, obj[:2], atol=1e-12)
    assert grasp[2] == pytest.approx(obj[2] - relative[2])


@pytest.mark.parametrize("y, gap, theta, psi", [
    (0.0, 0.002, 0.0, 0.0),
    (0.05, 0.004, 0.1, -0.15),
    (-0.08, 0.0, -0.05, 0.17),
])
def test_drawing_start_state_places_tip(y, gap, theta, psi):
    tool = find_tool("marker_chisel")
    cfg = task_sim_config(TASK_DRAWING)
    state = drawing_start_state(tool, cfg, y, gap, theta, psi, 0.025)
    tip = tool_tip_world(object_planar(state), tool.tip)
    np.testing.assert_allclose(tip, [y, -gap], atol=1e-9)
    np.testing.assert_allclose(
        relative_planar(state), [0.0, 0.0, psi], atol=1e-9
    )
    assert state.width == pytest.approx(0.025)
    assert not state.dropped


@pytest.mark.parametrize("theta", [math.radians(45.0), -math.radians(45.0)])
def test_pivoting_start_state_touches_table(theta):
    tool = find_tool("bar_narrow")
    cfg = task_sim_config(TASK_PIVOTING)
    state = pivoting_start_state(tool, cfg, theta, 0.2)
    obj = object_planar(state)
    world = tool.vertices @ rotation_2d(obj[2]).T + obj[:2]
    assert np.min(world[:, 1]) - tool.radius == pytest.approx(0.0, abs=1e-9)
    assert obj[2] == pytest.approx(theta)
    assert relative_planar(state)[2] == pytest.approx(0.2)


class TestCollectionConfig:
    def test_roundtrip(self):
        cfg = CollectionConfig(per_tool=30, random_probability=0.2)
        restored = CollectionConfig.from_data(cfg.to_data())
        assert restored.to_data() == cfg.to_data()

    def test_from_data_ignores_unknown(self):
        cfg = CollectionConfig.from_data({"per_tool": 12, "speed": 3})
        assert cfg.per_tool == 12

    @pytest.mark.parametrize("kwargs", [
        {"per_tool": 0},
        {"random_probability": 1.5},
        {"line_fraction": -0.1},
        {"pivoting_episode_length": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            CollectionConfig(**kwargs)

    @pytest.mark.parametrize("per_tool, fraction, expected", [
        (800, 2.0 / 3.0, 534),
        (3, 2.0 / 3.0, 2),
        (10, 0.0, 0),
        (10, 1.0, 10),
    ])
    def test_line_transitions(self, per_tool, fraction, expected):
        cfg = CollectionConfig(per_tool=per_tool, line_fraction=fraction)
        assert cfg.line_transitions == expected


def test_collector_rejects_unknown_task():
    with pytest.raises(ConfigError):
        DataCollector("juggling")


def test_collector_needs_tools(rng):
    collector = DataCollector(TASK_PIVOTING)
    with pytest.raises(ConfigError):
        collector.collect([], rng)


@pytest.mark.slow
def test_pivoting_collection_records_transitions(rng):
    cfg = CollectionConfig(per_tool=3, observe=False)
    collector = DataCollector(TASK_PIVOTING, cfg)
    dataset = collector.collect([find_tool("bar_narrow")], rng)
    assert len(dataset) == 3
    summary = collector.summary
    assert summary["task"] == TASK_PIVOTING
    assert summary["random_fraction"] == 1.0
    assert summary["episodes"] >= 1
