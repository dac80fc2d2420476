import numpy as np
import pytest

from bubbledyn.constants import TASK_DRAWING, TASK_PIVOTING
from bubbledyn.tool_shapes import tool_library, rectangle_tool
from bubbledyn.simulator import SimConfig


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: acceptance runs excluded by default"
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def drawing_tools():
    return tool_library(TASK_DRAWING)


@pytest.fixture(scope="session")
def pivoting_tools():
    return tool_library(TASK_PIVOTING)


@pytest.fixture(scope="session")
def plate_tool():
    # 30 mm wide, 100 mm long flat plate, 10 mm thick
    return rectangle_tool("plate", 0.03, 0.1, 0.005)


@pytest.fixture
def free_sim_config():
    """Simulator config with the environment plane far away."""
    return SimConfig(env_point=(0.0, 0.0, -10.0), env_normal=(0.0, 0.0, 1.0))


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for key in ("BUBBLEDYN_SEED", "BUBBLEDYN_HOME", "BUBBLEDYN_LOG_LEVEL"):
        monkeypatch.delenv(key, raising=False)
