"""
Configuration settings for the meta Gibbs laboratory.

This file contains default tolerances, enumeration caps, seeds and output
locations, plus the registry of built-in verification suites. A few
defaults can be overridden from the environment (or a `.env` file).
"""

import os

from dotenv import load_dotenv

load_dotenv()

TOOL_VERSION = "0.3.0"

# Tolerances
PROB_SUM_TOL = 1e-12
ENUM_SUM_TOL = 1e-10
ZERO_SLICE_TOL = 1e-15
IDENTITY_TOL = 1e-10
SUPER_IDENTITY_TOL = 1e-9
BOUND_SLACK_TOL = 1e-9
CLOSED_FORM_TOL = 1e-12
SLOPE_TOL = 1e-9
CROSS_TERM_TOL = 1e-10
MC_SIGMAS = 4.0

# Enumeration and Monte Carlo
DEFAULT_STATE_CAP = int(os.environ.get("METAGIBBS_STATE_CAP", 10_000_000))
DEFAULT_MASTER_SEED = int(os.environ.get("METAGIBBS_SEED", 20240601))
DEFAULT_TRIALS = 100_000
MIN_TRIALS = 100
MC_BLOCK_SIZE = 4096

# Output
DEFAULT_OUT_DIR = os.environ.get(
    "METAGIBBS_OUT_DIR",
    os.path.join(os.path.dirname(os.path.dirname(__file__)), "results"),
)
LOG_LEVEL = os.environ.get("METAGIBBS_LOG_LEVEL", "INFO")

# Built-in suites: (name, theorem anchor, tolerance)
SUITES = [
    ("verify-theorem1", "Theorem 1 (meta Gibbs, symmetrized KL identity)", IDENTITY_TOL),
    ("verify-theorem2", "Theorem 2 (super-task Gibbs, conditional identities)", SUPER_IDENTITY_TOL),
    ("mean-estimation", "Mean-estimation closed form, channel trace and Monte Carlo", CLOSED_FORM_TOL),
    ("bounds", "Theorems 3 and 4 (distribution-free bounds)", BOUND_SLACK_TOL),
    ("rate-sweep", "Convergence rates in n and m", SLOPE_TOL),
]
