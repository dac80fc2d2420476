"""Run configuration nesting every module config in one JSON document."""
import os

from .constants import (
    TASK_PIVOTING,
    MODEL_MEMBRANE,
    TRAINED_MODEL_KINDS,
)
from .collection import CollectionConfig
from .controller import MppiConfig, CostConfig
from .evaluation import EvalProtocol, check_model_task
from .exceptions import ConfigError
from .observation import IcpConfig, ContactConfig
from .simulator import SimConfig
from .tool_shapes import tool_library, find_tool
from .training import TrainConfig
from .utils import (
    get_default_seed,
    get_env_seed,
    get_default_artifacts_root,
    slugify_string,
    write_json,
    read_json,
)

# Nested config key -> config class
SECTIONS = (
    ("sim", SimConfig),
    ("collection", CollectionConfig),
    ("icp", IcpConfig),
    ("contact", ContactConfig),
    ("train", TrainConfig),
    ("mppi", MppiConfig),
    ("cost", CostConfig),
    ("protocol", EvalProtocol),
)


class RunConfig(object):
    """Everything one command needs.

    Paths left empty are derived from the artifacts root, which defaults
    to 'BUBBLEDYN_HOME' or the per-user data directory.

    Args:
        task (str): 'drawing' or 'pivoting'.
        model (str): Model kind.
        seed (Optional[int]): Run seed, 'BUBBLEDYN_SEED' overrides it.
        root (Optional[str]): Artifacts root directory.
        dataset_dirs (Optional[list[str]]): Dataset directories; the first
            one is written by 'collect'.
        autoencoder_dir (Optional[str]): Autoencoder checkpoint directory.
        model_dir (Optional[str]): Dynamics checkpoint directory.
        results_dir (Optional[str]): Evaluation output directory.
        train_tools (Optional[list[str]]): Training tool names, the task's
            train set by default.
        test_tools (Optional[list[str]]): Held-out tool names, the task's
            test set by default.
        **sections: Nested module configs as objects or dicts, keyed as in
            'SECTIONS'.

    """

    def __init__(
        self,
        task=TASK_PIVOTING,
        model=MODEL_MEMBRANE,
        seed=None,
        root=None,
        dataset_dirs=None,
        autoencoder_dir=None,
        model_dir=None,
        results_dir=None,
        train_tools=None,
        test_tools=None,
        **sections
    ):
        unknown = set(sections) - {key for key, _ in SECTIONS}
        if unknown:
            raise ConfigError("Unknown config sections {}".format(
                ", ".join(sorted(unknown))
            ))
        self.task = task
        self.model = model
        self.seed = None if seed is None else int(seed)
        self.root = root
        self.dataset_dirs = list(dataset_dirs or [])
        self.autoencoder_dir = autoencoder_dir
        self.model_dir = model_dir
        self.results_dir = results_dir
        self.train_tools = None if train_tools is None else list(train_tools)
        self.test_tools = None if test_tools is None else list(test_tools)
        for key, config_cls in SECTIONS:
            value = sections.get(key)
            if value is None or isinstance(value, dict):
                value = config_cls.from_data(value)
            setattr(self, key, value)

    def validate(self):
        """Check model and task names and their combination."""
        check_model_task(self.model, self.task)
        for name in (self.train_tools or []) + (self.test_tools or []):
            try:
                find_tool(name)
            except KeyError as exc:
                raise ConfigError(str(exc.args[0]))
        return self

    @property
    def run_seed(self):
        """Seed after the environment override."""
        env_seed = get_env_seed()
        if env_seed is not None:
            return env_seed
        if self.seed is not None:
            return self.seed
        return get_default_seed()

    @property
    def artifacts_root(self):
        return self.root or get_default_artifacts_root()

    @property
    def dataset_dir(self):
        if self.dataset_dirs:
            return self.dataset_dirs[0]
        return os.path.join(self.artifacts_root, "datasets", self.task)

    @property
    def datasets(self):
        return self.dataset_dirs or [self.dataset_dir]

    @property
    def autoencoder_path(self):
        if self.autoencoder_dir:
            return self.autoencoder_dir
        return os.path.join(self.artifacts_root, "checkpoints", "autoencoder")

    @property
    def model_path(self):
        if self.model_dir:
            return self.model_dir
        return os.path.join(
            self.artifacts_root,
            "checkpoints",
            slugify_string("{}_{}".format(self.task, self.model)),
        )

    @property
    def results_path(self):
        if self.results_dir:
            return self.results_dir
        return os.path.join(
            self.artifacts_root,
            "results",
            slugify_string("{}_{}".format(self.task, self.model)),
        )

    @property
    def needs_checkpoint(self):
        return self.model in TRAINED_MODEL_KINDS

    def tools(self):
        """Train and test tools of the task.

        Returns:
            tuple[list[ToolShape], list[ToolShape]]: Resolved tools.

        """
        train, test = tool_library(self.task)
        if self.train_tools is not None:
            train = [find_tool(name) for name in self.train_tools]
        if self.test_tools is not None:
            test = [find_tool(name) for name in self.test_tools]
        return train, test

    def to_data(self):
        data = {
            "task": self.task,
            "model": self.model,
            "seed": self.seed,
            "root": self.root,
            "dataset_dirs": list(self.dataset_dirs),
            "autoencoder_dir": self.autoencoder_dir,
            "model_dir": self.model_dir,
            "results_dir": self.results_dir,
            "train_tools": self.train_tools,
            "test_tools": self.test_tools,
        }
        for key, _ in SECTIONS:
            data[key] = getattr(self, key).to_data()
        return data

    @classmethod
    def from_data(cls, data):
        data = dict(data or {})
        known = {
            "task", "model", "seed", "root", "dataset_dirs",
            "autoencoder_dir", "model_dir", "results_dir", "train_tools",
            "test_tools",
        }
        known.update(key for key, _ in SECTIONS)
        return cls(**{
            key: value
            for key, value in data.items()
            if key in known
        })

    @classmethod
    def load(cls, path):
        if not os.path.exists(path):
            raise ConfigError("Config file \"{}\" does not exist".format(path))
        return cls.from_data(read_json(path))

    def save(self, path):
        write_json(path, self.to_data())
