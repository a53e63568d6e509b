import os
from dotenv import load_dotenv
from pathlib import Path

# Get the directory where this config.py file is located
BASE_DIR = Path(__file__).resolve().parent

# Load .env file from the project root (where config.py is located)
env_path = BASE_DIR / '.env'
load_dotenv(dotenv_path=env_path, override=True)

# Parallel sweep configuration
ALEUFE_THREADS = int(os.getenv("ALEUFE_THREADS", str(os.cpu_count() or 1)))  # Max worker processes for sweeps

# Discretization defaults
GAMMA0 = float(os.getenv("ALEUFE_GAMMA0", "1000.0"))  # Nitsche / interface penalty
DELTA_FACTOR = float(os.getenv("ALEUFE_DELTA_FACTOR", "0.5"))  # delta = DELTA_FACTOR * tau
CURVE_DEGREE = int(os.getenv("ALEUFE_CURVE_DEGREE", "4"))  # Curved side degree in cut rules (0 = exact spline)
QUAD_ORDER_OFFSET = 2  # Default quadrature order = 2k + QUAD_ORDER_OFFSET

# Linear solver configuration
LINEAR_SOLVER = os.getenv("ALEUFE_LINEAR_SOLVER", "direct")  # "direct" or "iterative"
SOLVER_TOL = float(os.getenv("ALEUFE_SOLVER_TOL", "1e-10"))
SOLVER_MAXITER = int(os.getenv("ALEUFE_SOLVER_MAXITER", "2000"))

# Newton iterations (projections, segment inversion, contour refinement)
NEWTON_TOL = float(os.getenv("ALEUFE_NEWTON_TOL", "1e-12"))
NEWTON_MAXITER = int(os.getenv("ALEUFE_NEWTON_MAXITER", "50"))

# Interface tracking
RESAMPLE_LOWER = 0.5  # Resample when a marker gap drops below RESAMPLE_LOWER * eta
RESAMPLE_UPPER = 2.0  # ... or exceeds RESAMPLE_UPPER * eta
SEGMENT_MERGE_FACTOR = float(os.getenv("ALEUFE_SEGMENT_MERGE_FACTOR", "1e-3"))  # Merge sub-segments shorter than factor * h
BOUNDARY_DATA = os.getenv("ALEUFE_BOUNDARY_DATA", "spline")  # "spline" or "transfer"

# Output configuration
OUTPUT_DIR = os.getenv("ALEUFE_OUTPUT_DIR", "output")  # Used when --out is given without a directory
LOG_LEVEL = os.getenv("ALEUFE_LOG_LEVEL", "INFO")
VERBOSE_OUTPUT = os.getenv("VERBOSE_OUTPUT", "true").lower() == "true"  # Print banners and per-level summaries
