"""Constants for rm_lab."""

import json
from logging import Logger, getLogger
from pathlib import Path

LOGGER: Logger = getLogger(__package__)

DOMAIN = "rm_lab"
VERSION: str = json.loads((Path(__file__).parent / "manifest.json").read_text(encoding="utf-8"))["version"]
REPORT_SCHEMA_VERSION = 1

ENV_SEED = "RM_LAB_SEED"
ENV_LOG_LEVEL = "RM_LAB_LOG_LEVEL"

# autodiff
ABS_SMOOTH_KAPPA = 1e-12

# quadrature
DEFAULT_QUAD_ORDER = 8
DEFAULT_QUAD_RTOL = 1e-9
DEFAULT_QUAD_ATOL = 1e-15
DEFAULT_PANEL_CAP = 1024
PROBE_POINTS = 1000  # sampled points for coefficient/positivity checks

# bases
GRAM_TOLERANCE = 1e-8
BASIS_ORDER_BUMP = 4

# fractional Laplacian
FRAC_NEAR_FIELD = 0.25
FRAC_GL_ORDER = 16
FRAC_GRADING_LEVELS = 16
GAGLIARDO_STRIP = 1e-4

# training
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
STOP_WINDOW = 200
DELTA_FACTOR = 1e-6  # δ_n = DELTA_FACTOR · first loss, halved per architecture level
TRAJECTORY_HEADER = ("iteration", "loss", "residual_part", "boundary_part", "grad_norm")

# estimators
BOUND_FLAG_FACTOR = 2.0

# cli
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUN_FAILURE = 3
DEFAULT_RUN_TIMEOUT = 3600.0
