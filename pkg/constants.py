import os

# Slicing window and scheduler
WINDOW_LEN_SLOTS = 100
TOTAL_CAPACITY_BYTES = 940  # per 1 ms slot, ~70% offered load under the default traffic
ACTION_GRANULARITY = 0.1
MIN_SHARE = 0.1
DEPARTURE_COUNT = 5
DEPARTURE_AGE_FACTOR = 2.0
BUDGET_EPSILON = 1e-9

# Reward (weights and c2 per slice; c1 is a configurable slope)
SLICE_NAMES = ("VoNR", "VR", "Video")
SLICE_WEIGHTS = (0.1, 0.7, 0.2)
SLICE_C1 = (0.5, 2.0, 1.0)
SLICE_C2 = (10.0, 1.0, 5.0)

# Traffic
PARETO_SHAPE = 1.2
VIDEO_INTERARRIVAL_MEAN_MS = 6.0
VIDEO_INTERARRIVAL_MAX_MS = 12.5
VIDEO_SIZE_MEAN_B = 100.0
VIDEO_SIZE_MAX_B = 250.0
VONR_INTERARRIVAL_MIN_MS = 0.0
VONR_INTERARRIVAL_MAX_MS = 160.0
VONR_SIZE_B = 40
VR_FRAME_PERIOD_MS = 1000.0 / 72.0
VR_SIZE_MEAN_B = 4000.0
VR_SIZE_STD_B = 1000.0
VR_SIZE_MIN_B = 500
VR_SIZE_MAX_B = 8000
# a frame is paced out over its period, one packet per whole ms (13 at 72 fps)
VR_FRAME_PACKETS = None

# (mean, max) of the clamped Poisson user count per slice
VONR_USERS = (70.0, 104)
VR_USERS = (1.0, 7)
VIDEO_USERS = (20.0, 43)

# Learner
HIDDEN_SIZES = (32, 32)
LEARNING_RATE = 0.01
BATCH_SIZE = 4
CLIP_RATIO = 0.2
DISCOUNT = 0.95
ENTROPY_COEF = 0.01
VALUE_COEF = 0.5
EPOCHS_PER_UPDATE = 3
POLICY_INIT_SCALE = 0.01

# Exploration
EXPLORATION_RATE = 0.2
EXPLORATION_DECAYS = (0.99, 0.7, 0.5, 0.3)
EXPLORATION_END_STEP = 4000

# Transfer
TRANSFER_RATES = (0.9, 0.7, 0.5, 0.3)
TRANSFER_DECAY = 0.99
TRANSFER_DURATION = 3000
HYBRID_GAMMAS = (0.99, 0.9, 0.7, 0.5, 0.3)

# Runs and metrics
TOTAL_STEPS = 10000
INITIAL_REWARD_WINDOW = 100
CONVERGENCE_WINDOW = 200
ORACLE_WINDOWS = 200
CONVERGENCE_FRACTION = 0.9
TOP_K = 64

POLICY_FORMAT_VERSION = 1
POLICY_SUFFIX = ".policy"

CONFIG_PATH = os.path.join(os.path.dirname(__file__), 'config', 'default.yaml')
