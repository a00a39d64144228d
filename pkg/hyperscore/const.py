"""Constants for HyperScore."""

DOMAIN = "hyperscore"

FEATURE_MAGIC = b"HSF1"
CHECKPOINT_MAGIC = b"HSC1"

# Full-scale dims
DEFAULT_VIEWS = 6
DEFAULT_PATCHES = 196
DEFAULT_TEXT_TOKENS = 77
DEFAULT_FEATURE_DIM = 512
DEFAULT_QUALITY_DIM = 224
DEFAULT_PROMPT_TOKENS = 12
DEFAULT_HYPER_CHANNELS = 112
DEFAULT_HYPER_GRID = 7
DEFAULT_ENCODER_RANK = 64

DEFAULT_DIMENSIONS = ["alignment", "geometry", "texture", "overall"]

PROMPT_CATEGORIES = [
    "Basic",
    "Refined",
    "Complex",
    "Fantastical",
    "Grouped",
    "Action",
    "Spatial",
    "Imaginative",
]

GENERATIVE_METHODS = [
    "DreamFusion",
    "Magic3D",
    "SJC",
    "TextMesh",
    "3DTopia",
    "Consistent3D",
    "LatentNeRF",
    "One-2-3-45++",
]

# (elevation_deg, azimuth_deg) grids per view count
CAMERA_GRIDS: dict[int, tuple[tuple[float, ...], tuple[float, ...]]] = {
    4: ((-60.0, 60.0), (0.0, 180.0)),
    9: ((-60.0, 0.0, 60.0), (0.0, 120.0, 240.0)),
    12: ((-60.0, 0.0, 60.0), (0.0, 90.0, 180.0, 270.0)),
    16: ((-60.0, -30.0, 30.0, 60.0), (0.0, 90.0, 180.0, 270.0)),
}
CAMERA_SIX_VIEWS = [
    (0.0, 0.0),
    (0.0, 90.0),
    (0.0, 180.0),
    (0.0, 270.0),
    (90.0, 0.0),
    (-90.0, 0.0),
]

TOKEN_INIT_STD = 0.02

AGGREGATION_MULTIPLY = "multiply"
AGGREGATION_ADD = "add"
AGGREGATION_CONCAT = "concat"
AGGREGATIONS = [AGGREGATION_MULTIPLY, AGGREGATION_ADD, AGGREGATION_CONCAT]

# Training defaults
DEFAULT_BATCH_SIZE = 8
DEFAULT_EPOCHS = 30
DEFAULT_LR_MAIN = 2e-4
DEFAULT_LR_ENCODER = 2e-6
DEFAULT_LR_DECAY = 0.9
DEFAULT_LR_DECAY_EVERY = 5
DEFAULT_WEIGHT_DECAY = 1e-4
DEFAULT_LAMBDA = 1.0
DEFAULT_MARGIN = 0.0
DEFAULT_FOLDS = 5
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

GROUP_PROMPTS = "prompts"
GROUP_FUSION = "fusion"
GROUP_HYPERNET = "hypernet"
GROUP_ENCODER = "encoder_adapter"
PARAM_GROUPS = [GROUP_PROMPTS, GROUP_FUSION, GROUP_HYPERNET, GROUP_ENCODER]

# Gradient checking
GRADCHECK_STEP_F64 = 1e-5
GRADCHECK_STEP_F32 = 1e-2
GRADCHECK_TOL_F64 = 1e-4
GRADCHECK_TOL_F32 = 1e-2
GRADCHECK_FLOOR = 1e-4

# Subjective scores
SCORE_MIN = 0
SCORE_MAX = 10
TRAP_LOW_THRESHOLD = 3
TRAP_DUPLICATE_THRESHOLD = 3
BT500_REJECT_RATIO = 0.05
BT500_BALANCE_RATIO = 0.3
BT500_KURTOSIS_LOW = 2.0
BT500_KURTOSIS_HIGH = 4.0

BASELINE_WEIGHT = 2.5
LOGISTIC_MAX_ITERATIONS = 200

ENV_THREADS = "HS_THREADS"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

# Run configuration keys
CONF_PATHS = "paths"
CONF_MANIFEST = "manifest"
CONF_FEATURE_DIR = "feature_dir"
CONF_ANNOTATIONS = "annotations"
CONF_LABELS = "labels"
CONF_PREDICTIONS = "predictions"
CONF_OUTPUT_DIR = "output_dir"

CONF_DIMS = "dims"
CONF_VIEWS = "views"
CONF_PATCHES = "patches"
CONF_TEXT_TOKENS = "text_tokens"
CONF_FEATURE_DIM = "feature_dim"
CONF_QUALITY_DIM = "quality_dim"
CONF_DIMENSIONS = "dimensions"
CONF_PROMPT_TOKENS = "prompt_tokens"

CONF_TRAIN = "train"
CONF_BATCH_SIZE = "batch_size"
CONF_EPOCHS = "epochs"
CONF_LR_MAIN = "lr_main"
CONF_LR_ENCODER = "lr_encoder"
CONF_LR_DECAY = "lr_decay"
CONF_LR_DECAY_EVERY = "lr_decay_every"
CONF_WEIGHT_DECAY = "weight_decay"
CONF_LAMBDA = "lambda"
CONF_MARGIN = "margin"
CONF_FOLDS = "folds"

CONF_MODEL = "model"
CONF_FUSION_HIDDEN = "fusion_hidden"
CONF_HEAD_DIMS = "head_dims"
CONF_HYPER_CHANNELS = "hyper_channels"
CONF_HYPER_GRID = "hyper_grid"
CONF_ENCODER_RANK = "encoder_rank"
CONF_AGGREGATION = "aggregation"
CONF_USE_META = "use_meta_tokens"
CONF_CONDITIONAL_FUSION = "conditional_fusion"
CONF_HYPER_HEADS = "hyper_heads"

CONF_SYNTH = "synth"
CONF_NUM_PROMPTS = "num_prompts"
CONF_NUM_METHODS = "num_methods"
CONF_LABEL_MEAN = "label_mean"
CONF_LABEL_STD = "label_std"

CONF_SCREENING = "screening"
CONF_TRAP_LOW = "trap_low"
CONF_TRAP_DUPLICATE = "trap_duplicate"
CONF_LOW_QUALITY_IDS = "low_quality_ids"
CONF_DUPLICATE_PAIRS = "duplicate_pairs"

CONF_MODES = "modes"
CONF_PRECISION = "gradcheck_precision"
CONF_LOGISTIC = "logistic_mapping"
CONF_PARALLEL = "parallel"

CONF_LOGGER = "logger"
CONF_DEFAULT = "default"
CONF_LOGS = "logs"

CONF_SEED = "seed"
