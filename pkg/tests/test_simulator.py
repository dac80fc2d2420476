import math

import numpy as np
import pytest

from bubbledyn.collection import (
    CollectionConfig,
    DataCollector,
    pivoting_start_state,
)
from bubbledyn.constants import TASK_PIVOTING
from bubbledyn.exceptions import ConfigError
from bubbledyn.poses import Action4, planar_compose, rotation_2d, wrap_angle
from bubbledyn.processing import crop_raw
from bubbledyn.tool_shapes import pointed_tool, rectangle_tool
from bubbledyn.simulator import (
    SimConfig,
    MembraneSimulator,
    EquilibriumProblem,
    make_sim_state,
    render_depth_pair,
    render_raw_pair,
    compute_wrench,
    grip_force,
    min_width,
    relative_planar,
    object_planar,
    grasp_planar,
    in_hand_angle,
    save_scenario,
    load_scenario,
    problem_pose,
)


def centered_state(width=0.03, relative=(0.0, 0.0, 0.0)):
    return make_sim_state((0.0, 0.2, 0.0), relative, width)


def hold(state):
    return Action4(state.width, 0.0, 0.0, 0.0)


def test_no_overlap_renders_zero(plate_tool, free_sim_config):
    maps = render_depth_pair(centered_state(0.05), plate_tool, free_sim_config)
    assert maps.shape == (2, 175, 140)
    assert np.all(maps == 0.0)


def test_membranes_see_mirrored_imprints(plate_tool, free_sim_config):
    state = centered_state(relative=(0.003, -0.002, 0.2))
    maps = render_depth_pair(state, plate_tool, free_sim_config)
    assert maps.max() > 0.0
    np.testing.assert_allclose(maps[1], maps[0][:, ::-1], atol=1e-12)


def test_plateau_depth(plate_tool, free_sim_config):
    maps = render_depth_pair(centered_state(0.03), plate_tool, free_sim_config)
    # half thickness + rest gap - width / 2
    assert maps.max() == pytest.approx(0.005 + 0.014 - 0.015, abs=1e-9)
    assert maps[0, 87, 70] == pytest.approx(0.004, abs=1e-9)
    assert maps[0, 87, 5] == 0.0


def test_render_is_deterministic_with_seed(plate_tool, free_sim_config):
    state = centered_state()
    first = render_depth_pair(
        state, plate_tool, free_sim_config, np.random.default_rng(3)
    )
    second = render_depth_pair(
        state, plate_tool, free_sim_config, np.random.default_rng(3)
    )
    np.testing.assert_array_equal(first, second)
    assert first.min() >= -0.002
    assert first.max() <= 0.05


def test_raw_pipeline_matches_render(plate_tool, free_sim_config):
    state = centered_state()
    measured, reference = render_raw_pair(state, plate_tool, free_sim_config)
    assert measured.shape == (2, 224, 171)
    np.testing.assert_allclose(
        crop_raw(measured) - crop_raw(reference),
        render_depth_pair(state, plate_tool, free_sim_config),
        atol=1e-15,
    )


def test_no_contact_zero_wrench(plate_tool, free_sim_config):
    wrench = compute_wrench(centered_state(0.05), plate_tool, free_sim_config)
    np.testing.assert_array_equal(wrench.force, 0.0)
    np.testing.assert_array_equal(wrench.torque, 0.0)


def test_symmetric_grasp_no_lateral_force(plate_tool, free_sim_config):
    state = centered_state()
    wrench = compute_wrench(state, plate_tool, free_sim_config)
    grip = grip_force(state, plate_tool, free_sim_config)
    assert grip > 1.0
    assert abs(wrench.force[1]) < 1e-6 * grip


def test_free_space_hold_keeps_state(plate_tool, free_sim_config):
    sim = MembraneSimulator(plate_tool, free_sim_config)
    state = centered_state(relative=(0.002, -0.004, 0.1))
    next_state = sim.step(state, hold(state))
    assert not next_state.dropped
    np.testing.assert_allclose(
        relative_planar(next_state), relative_planar(state), atol=1e-12
    )
    np.testing.assert_allclose(
        grasp_planar(next_state), grasp_planar(state), atol=1e-15
    )


def test_free_space_translation_transports_object(
    plate_tool, free_sim_config
):
    sim = MembraneSimulator(plate_tool, free_sim_config)
    state = centered_state(relative=(0.0, 0.0, 0.3))
    next_state = sim.step(state, Action4(state.width, 0.01, -0.004, 0.0))
    np.testing.assert_allclose(
        object_planar(next_state) - object_planar(state),
        [0.01, -0.004, 0.0],
        atol=1e-12,
    )
    assert in_hand_angle(next_state) == pytest.approx(0.3, abs=1e-12)


def test_step_is_deterministic(plate_tool):
    cfg = SimConfig()
    sim = MembraneSimulator(plate_tool, cfg)
    state = pivoting_start_state(plate_tool, cfg, math.radians(45.0), 0.0)
    action = Action4(0.025, 0.0, -0.003, 0.0)
    first = sim.step(state, action)
    second = sim.step(state, action)
    np.testing.assert_array_equal(
        relative_planar(first), relative_planar(second)
    )
    assert first.anchor == second.anchor
    assert first.env_contacts == second.env_contacts


def test_wide_grip_drops_tool(plate_tool, free_sim_config):
    sim = MembraneSimulator(plate_tool, free_sim_config)
    state = centered_state()
    dropped = sim.step(state, Action4(0.06, 0.0, 0.0, 0.0))
    assert dropped.dropped
    assert sim.step(dropped, hold(state)) is dropped
    wrench = compute_wrench(dropped, plate_tool, free_sim_config)
    assert not np.any(wrench.force)


def test_width_is_clamped(free_sim_config):
    slab = rectangle_tool("slab", 0.03, 0.1, 0.015)
    limit = min_width(slab, free_sim_config)
    assert limit == pytest.approx(0.01)
    sim = MembraneSimulator(slab, free_sim_config)
    squeezed = sim.step(centered_state(), Action4(0.0, 0.0, 0.0, 0.0))
    assert squeezed.width == pytest.approx(limit)
    assert not squeezed.dropped


def test_pivot_keeps_tool_above_table(plate_tool):
    cfg = SimConfig()
    sim = MembraneSimulator(plate_tool, cfg)
    state = pivoting_start_state(plate_tool, cfg, math.radians(45.0), 0.0)
    start = relative_planar(state)
    for _ in range(3):
        state = sim.step(state, Action4(0.025, 0.0, -0.002, 0.0))
        obj = object_planar(state)
        world = plate_tool.vertices @ rotation_2d(obj[2]).T + obj[:2]
        assert world[:, 1].min() >= -1e-6
    assert not state.dropped
    assert state.in_contact
    assert np.linalg.norm(relative_planar(state) - start) > 1e-4


def test_solver_energy_never_increases(plate_tool, free_sim_config):
    problem = EquilibriumProblem(
        plate_tool,
        free_sim_config,
        np.array([0.0, 0.2, 0.0]),
        0.03,
        (0.0, 0.0, 0.0),
        plate_tool.interior_grid(free_sim_config.contact_spacing),
        np.array([0.0, 0.2, 0.0]),
    )
    q, active, _ = problem.solve(np.array([0.003, 0.197, 0.05]))
    assert active == ()
    assert np.all(np.diff(problem.history) <= 0.0)
    np.testing.assert_allclose(q, [0.0, 0.2, 0.0], atol=1e-5)


def test_membrane_state_shapes(plate_tool, free_sim_config, rng):
    sim = MembraneSimulator(plate_tool, free_sim_config)
    membrane, full = sim.membrane_state(centered_state(), rng)
    assert membrane.p.shape == (2, 25, 20)
    assert membrane.w.shape == (6, )
    assert membrane.r.shape == (6, )
    assert full.shape == (2, 175, 140)
    np.testing.assert_allclose(membrane.r[1:3], [0.0, 0.2])


def test_scenario_roundtrip(tmp_path, plate_tool, free_sim_config):
    path = str(tmp_path / "scenario.json")
    state = centered_state(relative=(0.001, 0.002, 0.2))
    save_scenario(path, plate_tool, free_sim_config, state)
    tool, cfg, loaded = load_scenario(path)
    assert tool.name == "plate"
    assert cfg.to_data() == free_sim_config.to_data()
    np.testing.assert_allclose(
        relative_planar(loaded), relative_planar(state), atol=1e-12
    )
    assert loaded.width == state.width


@pytest.mark.parametrize(
    "kwargs",
    [
        {"stiffness": 0.0},
        {"friction": 2.5},
        {"pitch": -0.1},
        {"env_normal": (1.0, 0.0, 0.0)},
    ],
)
def test_invalid_sim_config(kwargs):
    with pytest.raises(ConfigError):
        SimConfig(**kwargs)


def test_sim_config_ignores_unknown_keys():
    cfg = SimConfig.from_data({"stiffness": 0.5, "colour": "red"})
    assert cfg.stiffness == 0.5


def test_pressing_on_table_matches_spring_chain():
    # each contact point holds one shear spring per jaw, in parallel, and
    # the table is rigid along its normal
    cfg = SimConfig()
    block = rectangle_tool("block", 0.03, 0.05, 0.005)
    points = block.interior_grid(cfg.contact_spacing)
    k_point = 2.0 * cfg.shear_ratio * cfg.stiffness * cfg.cell_ratio
    k_eff = k_point * len(points)
    press = 0.001

    sim = MembraneSimulator(block, cfg)
    state = make_sim_state((0.0, 0.025, 0.0), (0.0, 0.0, 0.0), 0.03)
    before = sim.wrench(state)
    pressed = sim.step(state, Action4(0.03, 0.0, -press, 0.0))

    assert not pressed.dropped
    assert pressed.in_contact
    np.testing.assert_allclose(
        object_planar(pressed), object_planar(state), atol=1e-7
    )
    increase = abs(sim.wrench(pressed).force[2] - before.force[2])
    assert increase == pytest.approx(k_eff * press, rel=0.05)


def grid_minimum(problem, tip, angles, slides):
    best = (np.inf, None, None)
    for angle in angles:
        lever = rotation_2d(angle) @ tip
        for slide in slides:
            pose = np.array([slide - lever[0], -lever[1], angle])
            energy = problem.energy(pose)
            if energy < best[0]:
                best = (energy, angle, slide)
    return best


def test_pivot_angle_matches_energy_grid_search():
    # frictionless table, so the tip slides and the pose has two free
    # coordinates: tool angle and tip position along the table
    cfg = SimConfig(shear_ratio=0.1, env_friction=0.0, outer_passes=1)
    stick = pointed_tool("stick", 0.02, 0.12, 0.02, 0.005)
    width = 0.03
    state = pivoting_start_state(stick, cfg, math.radians(45.0), 0.0, width)
    action = Action4(width, 0.0, -0.005, 0.0)
    moved = MembraneSimulator(stick, cfg).step(state, action)
    assert not moved.dropped

    grasp = grasp_planar(state) + np.array([0.0, -0.005, 0.0])
    transported = planar_compose(grasp, relative_planar(state))
    problem = EquilibriumProblem(
        stick,
        cfg,
        grasp,
        width,
        state.anchor,
        stick.interior_grid(cfg.contact_spacing),
        problem_pose(transported, stick, cfg),
    )
    start = object_planar(state)
    tip_start = rotation_2d(start[2]) @ stick.tip + start[:2]
    assert tip_start[1] == pytest.approx(0.0, abs=1e-12)

    _, angle, slide = grid_minimum(
        problem,
        stick.tip,
        start[2] + np.radians(np.arange(-20.0, 20.01, 0.5)),
        tip_start[0] + np.arange(-0.02, 0.02001, 0.001),
    )
    for angle_step, slide_step in ((0.05, 0.0001), (0.01, 0.00001)):
        _, angle, slide = grid_minimum(
            problem,
            stick.tip,
            angle + np.radians(np.arange(-30, 31) * angle_step),
            slide + np.arange(-30, 31) * slide_step,
        )

    simulated = object_planar(moved)[2]
    assert abs(float(wrap_angle(simulated - start[2]))) > math.radians(1.0)
    assert abs(float(wrap_angle(simulated - angle))) <= math.radians(0.5)


@pytest.mark.slow
def test_collection_episodes_pivot_the_tool(pivoting_tools):
    train_tools, _ = pivoting_tools
    episodes_per_tool = 10
    collector = DataCollector(
        TASK_PIVOTING,
        CollectionConfig(per_tool=5 * episodes_per_tool, observe=False),
    )
    dataset = collector.collect(train_tools, np.random.default_rng(8))
    arrays = dataset.arrays()
    episodes = arrays["episode"].astype(int)
    pivoted = []
    for episode in np.unique(episodes):
        rows = np.flatnonzero(episodes == episode)
        start = arrays["q_true_t"][rows[0], 2]
        angles = arrays["q_true_next"][rows, 2]
        change = np.abs(wrap_angle(angles - start))
        pivoted.append(bool(np.max(change) > math.radians(5.0)))
    assert len(pivoted) == episodes_per_tool * len(train_tools)
    assert np.mean(pivoted) >= 0.8
