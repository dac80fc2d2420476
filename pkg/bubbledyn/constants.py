import math

# Environments overriding run defaults
SEED_ENV_KEY = "BUBBLEDYN_SEED"
HOME_ENV_KEY = "BUBBLEDYN_HOME"
LOG_LEVEL_ENV_KEY = "BUBBLEDYN_LOG_LEVEL"

DEFAULT_SEED = 0
APP_NAME = "bubbledyn"

# --- Tactile signature ---
RAW_MAP_SHAPE = (224, 171)
MAP_SHAPE = (175, 140)
POOLED_MAP_SHAPE = (25, 20)
POOL_FACTOR = 7
# Centered crop of the raw map, floor((224 - 175) / 2), floor((171 - 140) / 2)
CROP_OFFSET = (24, 15)
# Learned models consume maps in millimeters
TACTILE_SCALE = 1000.0
MAX_DEFORMATION = 0.05
MIN_DEFORMATION = -0.002

# --- Model sizes ---
TACTILE_EMBEDDING_SIZE = 15
OBJECT_EMBEDDING_SIZE = 10
WRENCH_SIZE = 6
POSE_SIZE = 6
ACTION_SIZE = 4
DYNAMICS_HIDDEN_SIZE = 200
OBJECT_CLOUD_POINTS = 256
OBJECT_MIN_POINTS = 32

# --- Training ---
LEARNING_RATE = 0.001
ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8
TACTILE_LOSS_WEIGHT = 1.0
WRENCH_LOSS_WEIGHT = 0.0001
POSE_LOSS_WEIGHT = 0.0
BATCH_SIZE = 64
MAX_EPOCHS = 200
EARLY_STOP_PATIENCE = 20
VALIDATION_FRACTION = 0.2
BATCH_NORM_EPSILON = 1e-5
BATCH_NORM_MOMENTUM = 0.1
PRETRAIN_CLOUDS_PER_FAMILY = 500
PRIMITIVE_FAMILIES = ("box", "cylinder", "capsule", "wedge")

# --- Simulator ---
SENSOR_NOISE_STD = 0.0001
DROP_FORCE_THRESHOLD = 0.5
MAX_PENETRATION_RATIO = 0.8

# --- Observation ---
IMPRINT_MIN_DEFORMATION = 0.003
IMPRINT_TOP_FRACTION = 0.1
IMPRINT_CLUSTER_DISTANCE = 0.015
ICP_ITERATIONS = 20
ICP_INIT_CONE = math.radians(20.0)
ICP_MIN_MODEL_POINTS = 16
ICP_RESTARTS = 2
ICP_MAX_DISTANCE = 0.005
CONTACT_FORCE_THRESHOLD = 1.5

# --- Controller ---
MPPI_LAMBDA = 0.01
MPPI_HORIZON = 2
MPPI_SAMPLES = 100
MPPI_NOISE_FRACTION = 0.3
COST_WRENCH_WEIGHT = 0.0001
GOAL_WRENCH_MAGNITUDE = 3.0

# --- Tasks ---
TASK_DRAWING = "drawing"
TASK_PIVOTING = "pivoting"
TASK_NAMES = (TASK_DRAWING, TASK_PIVOTING)

CANVAS_SHAPE = (565, 860)
CANVAS_RESOLUTION = 0.001
PEN_RADIUS = 0.0015
INK_CONTACT_DISTANCE = 0.0005
DRAWING_LINE_LENGTH = 0.3
DRAWING_GOAL_SPACING = 0.01
IMPEDANCE_LIMIT = 0.01
RANDOM_ACTION_PROBABILITY = 0.15
TRANSITIONS_PER_TOOL = 800
DRAWING_LINE_FRACTION = 2.0 / 3.0
DRAWING_EPISODE_LENGTH = 40
RANDOM_EPISODE_LENGTH = 10
DRAWING_START_GAP = 0.002
DRAWING_FEED_ANGLE = math.radians(10.0)
GRASP_WIDTH = 0.025
MAX_DISCARDED_EPISODES = 200
PIVOTING_EPISODE_LENGTH = 5
PIVOTING_FEED_ANGLE = math.radians(45.0)
PIVOTING_CONTACT_ANGLE = math.radians(45.0)
PIVOTING_SUCCESS_BAND = 4.0
PIVOTING_MAX_ACTIONS = 10
PIVOTING_GOAL_RANGE = 90.0
PIVOTING_WIDE_GOAL_RANGE = 150.0
TRIALS_PER_TOOL = 10
REJECTION_ATTEMPTS = 1000

# --- Models ---
MODEL_MEMBRANE = "membrane"
MODEL_LINEAR = "linear"
MODEL_OBJPOSE = "objpose"
MODEL_FIXED = "fixed"
MODEL_JACOBIAN = "jacobian"
MODEL_RANDOM = "random"
MODEL_KINDS = (
    MODEL_MEMBRANE,
    MODEL_LINEAR,
    MODEL_OBJPOSE,
    MODEL_FIXED,
    MODEL_JACOBIAN,
    MODEL_RANDOM,
)
# Fixed model is evaluated on drawing only, Jacobian on pivoting only
MODEL_TASKS = {
    MODEL_MEMBRANE: set(TASK_NAMES),
    MODEL_LINEAR: set(TASK_NAMES),
    MODEL_OBJPOSE: set(TASK_NAMES),
    MODEL_FIXED: {TASK_DRAWING},
    MODEL_JACOBIAN: {TASK_PIVOTING},
    MODEL_RANDOM: set(TASK_NAMES),
}
# Kinds with trainable weights
TRAINED_MODEL_KINDS = (MODEL_MEMBRANE, MODEL_LINEAR, MODEL_OBJPOSE)

# --- Artifacts ---
TENSOR_MAGIC = b"BTNS"
TENSOR_VERSION = 1
MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"
PGM_UNIT = 0.00001
