from .version import __version__
from .exceptions import (
    BubbleDynError,
    TensorFormatError,
    ShapeError,
    SolverError,
    ObservationError,
    NoImprintError,
    DegenerateImprintError,
    TrainingError,
    ControllerError,
    InfeasibleActionError,
    ConfigError,
    CollectionError,
)
from .utils import (
    TrainingProgress,
    slugify_string,
    derive_rng,
)
from .poses import (
    PoseAA,
    Wrench6,
    Action4,
    MembraneState,
    TaskState,
    make_pose,
    pose_compose,
    pose_inverse,
    transform_points,
    planar_pose,
    planar_components,
    robot_action_model,
)
from .tensor_io import (
    tensor_write,
    tensor_read,
    write_pgm,
    read_pgm,
    write_pbm,
    read_pbm,
)
from .processing import (
    CameraModel,
    crop_raw,
    deformation_map,
    downsample,
    upsample,
    process_raw,
    make_camera_pair,
    depth_to_pointcloud,
)
from .dataset import (
    PointCloud,
    ObjectModel,
    Dataset,
    merge_datasets,
)
from .tool_shapes import (
    ToolShape,
    tool_library,
    find_tool,
)
from .simulator import (
    SimConfig,
    MembraneSimulator,
    make_sim_state,
    save_scenario,
    load_scenario,
)
from .models import (
    TactileAutoencoder,
    ObjectEncoder,
    MembraneDynamicsNet,
    StepModel,
    LatentModel,
    save_checkpoint,
    load_checkpoint,
)
from .baselines import (
    LinearDynamics,
    ObjectPoseDynamicsNet,
    FixedModel,
    JacobianModel,
    ObjectPoseModel,
    load_step_model,
    pseudo_random_policy,
)
from .training import (
    TrainConfig,
    AutoencoderTrainer,
    DynamicsTrainer,
)
from .observation import (
    IcpConfig,
    ContactConfig,
    ObservationModel,
    icp_fit,
    project_to_contact_manifold,
)
from .controller import (
    MppiConfig,
    CostConfig,
    MppiController,
    task_cost,
)
from .tasks import (
    ActionBox,
    DrawingCanvas,
    drawing_action_box,
    pivoting_action_box,
    drawing_score,
    pivoting_score,
)
from .collection import (
    CollectionConfig,
    DataCollector,
    collect_drawing_data,
    collect_pivoting_data,
)
from .evaluation import (
    EvalProtocol,
    Evaluator,
    TrialResult,
    run_evaluation,
    summarize_results,
)
from .config import RunConfig


__all__ = (
    "__version__",

    "BubbleDynError",
    "TensorFormatError",
    "ShapeError",
    "SolverError",
    "ObservationError",
    "NoImprintError",
    "DegenerateImprintError",
    "TrainingError",
    "ControllerError",
    "InfeasibleActionError",
    "ConfigError",
    "CollectionError",

    "TrainingProgress",
    "slugify_string",
    "derive_rng",

    "PoseAA",
    "Wrench6",
    "Action4",
    "MembraneState",
    "TaskState",
    "make_pose",
    "pose_compose",
    "pose_inverse",
    "transform_points",
    "planar_pose",
    "planar_components",
    "robot_action_model",

    "tensor_write",
    "tensor_read",
    "write_pgm",
    "read_pgm",
    "write_pbm",
    "read_pbm",

    "CameraModel",
    "crop_raw",
    "deformation_map",
    "downsample",
    "upsample",
    "process_raw",
    "make_camera_pair",
    "depth_to_pointcloud",

    "PointCloud",
    "ObjectModel",
    "Dataset",
    "merge_datasets",

    "ToolShape",
    "tool_library",
    "find_tool",

    "SimConfig",
    "MembraneSimulator",
    "make_sim_state",
    "save_scenario",
    "load_scenario",

    "TactileAutoencoder",
    "ObjectEncoder",
    "MembraneDynamicsNet",
    "StepModel",
    "LatentModel",
    "save_checkpoint",
    "load_checkpoint",

    "LinearDynamics",
    "ObjectPoseDynamicsNet",
    "FixedModel",
    "JacobianModel",
    "ObjectPoseModel",
    "load_step_model",
    "pseudo_random_policy",

    "TrainConfig",
    "AutoencoderTrainer",
    "DynamicsTrainer",

    "IcpConfig",
    "ContactConfig",
    "ObservationModel",
    "icp_fit",
    "project_to_contact_manifold",

    "MppiConfig",
    "CostConfig",
    "MppiController",
    "task_cost",

    "ActionBox",
    "DrawingCanvas",
    "drawing_action_box",
    "pivoting_action_box",
    "drawing_score",
    "pivoting_score",

    "CollectionConfig",
    "DataCollector",
    "collect_drawing_data",
    "collect_pivoting_data",

    "EvalProtocol",
    "Evaluator",
    "TrialResult",
    "run_evaluation",
    "summarize_results",

    "RunConfig",
)
