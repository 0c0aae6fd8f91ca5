"""
Application configuration settings
"""
import os

from dotenv import load_dotenv

load_dotenv()

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Reproducibility
SEED_ENV_VAR = "CONSTRUCT_SEED"
DEFAULT_SEED = int(os.getenv(SEED_ENV_VAR, "0"))

# Artifact schema versions
GRAPH_FILE_SCHEMA = "graph-container/1"
CHECKPOINT_SCHEMA = "featurized-softmax/1"
FEATURE_SCHEMA = "node-pair-features/1"
REPORT_SCHEMA = "eval-report/1"

# ==============================
# Diffusion
# ==============================

DIFFUSION_STEPS = int(os.getenv("DIFFUSION_STEPS", "500"))
COSINE_S = float(os.getenv("COSINE_S", "0.008"))
POSTERIOR_FLOOR = 1e-30

# ==============================
# Denoiser training
# ==============================

EDGE_LOSS_WEIGHT = float(os.getenv("EDGE_LOSS_WEIGHT", "5.0"))
LEARNING_RATE = float(os.getenv("LEARNING_RATE", "1e-2"))
MOMENTUM = float(os.getenv("MOMENTUM", "0.9"))
TRAIN_STEPS = int(os.getenv("TRAIN_STEPS", "5000"))
BATCH_SIZE = int(os.getenv("BATCH_SIZE", "4"))
LOG_EVERY = int(os.getenv("LOG_EVERY", "250"))

# Structural features are computed within this hop radius
FEATURE_MAX_HOPS = 10
BASELINE_SMOOTHING = 1e-6

# ==============================
# Evaluation
# ==============================

MMD_SIGMAS = {
    "degree": 1.0,
    "clustering": 1.0,
    "orbit": 1.0,
    "spectral": 1.0,
    "wavelet": 1.0,
}
KAPPA_SIGMA = float(os.getenv("KAPPA_SIGMA", "0.1"))
CLUSTERING_BINS = 100
SPECTRAL_BINS = 200
WAVELET_SCALES = (0.5, 1.0, 2.0, 4.0)
WAVELET_BINS_PER_SCALE = 50

# TLS content (cell graphs): which node labels are B and T cells
TLS_B_LABEL = int(os.getenv("TLS_B_LABEL", "0"))
TLS_T_LABEL = int(os.getenv("TLS_T_LABEL", "1"))
TLS_THRESHOLD = 0.05

# ==============================
# Synthetic datasets
# ==============================

PLANAR_NODES = 64
TREE_NODES = 64
LOBSTER_P1 = 0.7
LOBSTER_P2 = 0.7
LOBSTER_BACKBONE = (5, 40)
LOBSTER_NODE_RANGE = (11, 99)
CELLGRAPH_PHENOTYPES = 9
CELLGRAPH_NODE_RANGE = (40, 120)
CELLGRAPH_MEAN_DEGREE = 5.0
DEFAULT_SPLIT_COUNTS = (128, 32, 40)
