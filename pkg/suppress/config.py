# ============================================
#     Suppress — Global Configuration
#     Pipeline constants + environment overrides
# ============================================

import os

# =========================================
#   PATHS
# =========================================
# Project root = one level above /suppress
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# =========================================
#   LOGGING
# =========================================
# SUPPRESS_DETECT_LOG overrides --log-level when set.
LOG_LEVEL_ENV = "SUPPRESS_DETECT_LOG"
LOG_LEVEL = os.getenv(LOG_LEVEL_ENV, "")
DEFAULT_LOG_LEVEL = "INFO"

# Optional daily-rotating log file (unset → stderr only)
LOG_FILE = os.getenv("SUPPRESS_DETECT_LOG_FILE", "")
ROOT_LOGGER_NAME = os.getenv("SUPPRESS_DETECT_LOGGER_NAME", "suppress")

# =========================================
#   WORKERS
# =========================================
DEFAULT_THREADS = int(os.getenv("SUPPRESS_DETECT_THREADS", "1"))

# =========================================
#   PATCH GEOMETRY (SUPPRESSION END)
# =========================================
# 36x36 is the only input for which valid 3x3 convs + 2x2 pools
# give 17x17, 7x7 and 2x2 feature maps.
PATCH_SIZE = 36
PATCH_CHANNELS = 3

# =========================================
#   WEIGHTING (K-MEANS)
# =========================================
KMEANS_CLUSTERS = 3
KMEANS_MAX_ITERS = 100
KMEANS_EPS = 1e-6
KMEANS_RESTARTS = 10   # seeded k-means++ restarts; lowest inertia wins

# =========================================
#   SUPPRESSOR NET
# =========================================
CONV_FILTERS = (32, 32, 64)
DENSE_HIDDEN = 64
EXPECTED_PARAMETERS = 45_153
MODEL_FORMAT_VERSION = 1
BCE_EPSILON = 1e-7

# Training defaults (momentum, lr, decay, batch)
MOMENTUM = 0.9
LEARNING_RATE = 0.001
WEIGHT_DECAY = 0.0005
BATCH_SIZE = 1
EPOCHS = 20

# =========================================
#   EVALUATION / TUNING
# =========================================
IOU_THRESHOLD = 0.5
LABEL_IOU_THRESHOLD = 0.5   # positive training patch iff best IoU >= this
BASELINE_TH1 = 0.5          # unsuppressed baseline: th1 only, th2 = 0
DEFAULT_GRID = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
TOTAL_STRATUM = "total"
UNTAGGED_STRATUM = "(untagged)"

# =========================================
#   SYNTHETIC ORCHARD
# =========================================
DEFAULT_IMAGE_SIZE = (160, 120)
LIGHTINGS = ("overcast", "direct", "back", "side")
DEFAULT_LIGHTINGS = ("overcast", "direct", "back")
VARIETIES = ("gala", "blondee")

# =========================================
#   FILE LAYOUT (EXPORT / MANIFEST)
# =========================================
MANIFEST_FILE = "manifest.json"
ANNOTATIONS_FILE = "annotations.json"
DETECTIONS_FILE = "detections.json"
PROVENANCE_FILE = "provenance.json"
IMAGES_DIR = "images"
SPLITS = ("train", "val", "test")
