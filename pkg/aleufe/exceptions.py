"""
Error hierarchy for the solver package
"""
from typing import Optional

import numpy as np


class AleUfeError(Exception):
    """Base class for all solver errors"""


# Geometry

class GeometryError(AleUfeError, ValueError):
    """Invalid or unsupported geometry"""


class CurveOutsideDomain(GeometryError):
    """The (dilated) curve leaves the background box"""


class DegenerateCurve(GeometryError):
    """Curve is self-intersecting or has collapsed"""


class TooFewMarkers(GeometryError):
    """A closed spline needs at least four markers"""


class SelfIntersectingPolygon(DegenerateCurve):
    """Marker polygon crosses itself"""


class OnBoundary(GeometryError):
    """Point lies on the curve where an inside/outside answer was requested"""


class NoContour(GeometryError):
    """Level set has no zero contour inside the sampling box"""


class InvalidCellTopology(GeometryError):
    """Cut region inside a cell could not be decomposed"""


class NonInvertibleF(GeometryError):
    """Segment map lost monotonicity in its parameter"""


class ProjectionAmbiguous(GeometryError):
    """Two closest-point candidates are equally distant"""


AmbiguousProjection = ProjectionAmbiguous


# Evaluation

class EvaluationError(AleUfeError):
    """Point evaluation of a discrete field failed"""


class OutsideFictitiousDomain(EvaluationError):
    """Point is not inside any active cell of the stored cover"""

    def __init__(self, message: str, points: Optional[np.ndarray] = None,
                 step: Optional[int] = None, trace: str = ""):
        self.points = points
        self.step = step
        self.trace = trace
        details = message
        if step is not None:
            details += f" (step {step})"
        if points is not None and len(points):
            details += f"; first offending point {np.asarray(points)[0].tolist()}"
        if trace:
            details += f"; chain: {trace}"
        super().__init__(details)


# Solvers

class SolverError(AleUfeError, RuntimeError):
    """Numerical solve failed"""


class LinearSolveFailure(SolverError):
    """Sparse linear solve did not meet its residual contract"""


class Singular(LinearSolveFailure):
    """Matrix is singular to working precision"""


class NoConvergence(LinearSolveFailure):
    """Iterative solver hit its iteration cap"""


class NewtonDivergence(SolverError):
    """Scalar Newton iteration did not converge"""


class RunAborted(SolverError):
    """A time loop failed at a given step"""

    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"run aborted at step {step}: {message}")


# Configuration / bookkeeping

class ConfigError(AleUfeError, ValueError):
    """Invalid configuration or contract violation"""


class UnsupportedOrder(ConfigError):
    """Scheme order outside the supported range"""


class NonuniformStep(ConfigError):
    """History push with a time that breaks uniform spacing"""


class IndexOutOfRange(ConfigError):
    """Triplet index outside the matrix shape"""


class MissingReference(ConfigError):
    """Error norm needs a stored reference run"""
