from .curve import ClosedCurve, CurveSet, LevelSetGeometry, MarkerSet, fit_closed_spline
from .mesh import ActiveCover, BackgroundMesh, classify_cells, two_phase_covers
from .quad import CutGeometry, QuadratureRule, cut_area_rule
from .fespace import FEFunction, FESpace
from .flowmap import ClosedFormMotion, VelocityMotion, rk_backtrack, sbdf_update_markers
from .alemap import DiscreteALEMap, artificial_velocity, solve_one_step_map
from .timestep import SolutionHistory, StepRecord, bdf_coeffs, sbdf_coeffs
from .linalg import LinearSolver, SparseMatrix
from .solvers import (CoupledDriver, FixedDomainDriver, LevelSetTracker, MotionTracker, MovingHeatDriver,
                      TwoPhaseDriver, coupled_step, heat_step, solve_linear, two_phase_step)
from .models import CaseConfig, ConvergenceReport, ErrorRecord
