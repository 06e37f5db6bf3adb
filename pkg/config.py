"""
Configuration settings for dirac-loc
"""

import os
from dotenv import load_dotenv

load_dotenv()

CODE_VERSION = "dirac-loc 1.0.0"
PROG_NAME = "dirac-loc"

# Runtime Configuration
WORKERS = int(os.getenv("DIRACLOC_WORKERS", "0"))  # 0 means "use the config value"
OUTPUT_DIR = os.getenv("DIRACLOC_OUTPUT_DIR", "results")
LOG_LEVEL = os.getenv("DIRACLOC_LOG_LEVEL", "INFO")

# Group Membership
MEMBERSHIP_TOL = 1e-9  # times max(1, ||M||_F)
TRANSFER_TOL = 1e-8  # times ||T||
KRU_RECONSTRUCTION_TOL = 1e-8
KRU_DEGENERACY_TOL = 1e-9

# Lyapunov Estimation
DEFAULT_BATCHES = 50
DEFAULT_REORTH_PERIOD = 1
OVERFLOW_LOG_LIMIT = 300.0  # re-orthonormalize early beyond e^300
VANISHING_FLOOR = 1e-9

# Lie Algebra
CLOSURE_TOL = 1e-9
DEFAULT_D_LOG_O = 0.5
VERTEX_MAX_N = 16
CRITICAL_MAX_N = 8
CRITICAL_REFINE_TOL = 1e-6

# Spectrum
BISECTION_TOL = 1e-10
MULTIPLICITY_TOL = 1e-7
ENDPOINT_TOL = 1e-8
THOULESS_MARGIN = 3.0

# Green Kernel
CONDITION_LIMIT = 1e12
SINGULAR_RATE_LIMIT = 0.2
SCHUR_X_POINTS = 16
SCHUR_Y_POINTS = 4
COLLAR = (1, 3)  # boundary collar in cells from the box edge
BOOTSTRAP_RESAMPLES = 200

# Enumerated Values
CASES = [1, 2, 3, 4, 5]
KINDS = ["dirac", "schrodinger"]
COMMANDS = [
    "lyapunov", "scan", "lie", "threshold", "critical", "ids",
    "thouless", "green", "ildse", "ldp", "wegner", "group-check",
]

# Experiment Defaults
DEFAULT_STEPS = 100_000
DEFAULT_SAMPLES = 100
SEED_LIMIT = 2 ** 64
TASK_HASH_ROWS = 16  # data rows per task hash in the manifest
