from pydantic import BaseModel, Field, model_validator, field_validator
from typing import List, Optional, Dict
from datetime import datetime
import math


CASE_IDS = ("one-phase", "coupled", "two-phase", "topological")


class CaseConfig(BaseModel):
    """Definition of one benchmark run"""
    case: str = Field(..., description="Case id: 'one-phase', 'coupled', 'two-phase' or 'topological'")
    k: int = Field(3, description="BDF order and element degree (2, 3 or 4)")
    h: float = Field(..., gt=0, description="Mesh size, 1/N for an integer N")
    tau: Optional[float] = Field(None, gt=0, description="Time step (defaults to h)")
    T: Optional[float] = Field(None, gt=0, description="Final time (defaults to the case's final time)")
    gamma0: float = Field(1000.0, gt=0, description="Nitsche penalty")
    eta: Optional[float] = Field(None, gt=0, description="Marker spacing (defaults to h / 2)")
    nu1: Optional[float] = Field(None, gt=0, description="Viscosity of the enclosed phase (defaults to the case value)")
    nu2: Optional[float] = Field(None, gt=0, description="Viscosity of the outer phase (defaults to the case value)")
    reference_dir: Optional[str] = Field(None, description="Directory of a reference run for area errors")
    output_dir: Optional[str] = Field(None, description="Directory for CSV outputs (None = no files)")
    snapshot_every: int = Field(0, ge=0, description="Write a curve snapshot every n steps (0 = never)")
    solver: str = Field("direct", description="Linear solver: 'direct' or 'iterative'")
    allow_unequal: bool = Field(False, description="Permit tau != h")

    @field_validator("case")
    @classmethod
    def _known_case(cls, v: str) -> str:
        if v not in CASE_IDS:
            raise ValueError(f"unknown case '{v}', expected one of {CASE_IDS}")
        return v

    @field_validator("k")
    @classmethod
    def _supported_order(cls, v: int) -> int:
        if v not in (2, 3, 4):
            raise ValueError(f"k must be 2, 3 or 4, got {v}")
        return v

    @field_validator("solver")
    @classmethod
    def _known_solver(cls, v: str) -> str:
        if v not in ("direct", "iterative"):
            raise ValueError(f"unknown solver '{v}'")
        return v

    @model_validator(mode="after")
    def _check_steps(self) -> "CaseConfig":
        n = 1.0 / self.h
        if abs(n - round(n)) > 1e-9 * n:
            raise ValueError(f"h must be 1/N for an integer N, got {self.h}")
        if self.tau is None:
            self.tau = self.h
        if not self.allow_unequal and abs(self.tau - self.h) > 1e-14:
            raise ValueError(f"tau={self.tau} differs from h={self.h}; set allow_unequal to permit it")
        if self.eta is None:
            self.eta = 0.5 * self.h
        return self

    @property
    def n_cells(self) -> int:
        return int(round(1.0 / self.h))

    @property
    def label(self) -> str:
        return f"{self.case}-k{self.k}-h1_{self.n_cells}"


class ErrorRecord(BaseModel):
    """Error norms of one run"""
    h: float = Field(..., description="Mesh size")
    tau: float = Field(..., description="Time step")
    errors: Dict[str, float] = Field(default_factory=dict, description="Norm name -> value")
    steps: int = Field(0, description="Number of time steps taken")
    dofs: int = Field(0, description="Unknowns at the final step")
    seconds: float = Field(0.0, description="Wall time of the run")


class ConvergenceRow(BaseModel):
    """One refinement level of a convergence table"""
    h: float = Field(..., description="Mesh size")
    errors: Dict[str, float] = Field(..., description="Norm name -> error")
    rates: Dict[str, Optional[float]] = Field(default_factory=dict, description="Observed rate against the previous level")


class ConvergenceReport(BaseModel):
    """Errors over a refinement sweep with observed rates between consecutive halvings"""
    case: str = Field(..., description="Case id")
    k: int = Field(..., description="Order")
    records: List[ErrorRecord] = Field(default_factory=list, description="One record per level, coarse to fine")

    def norms(self) -> List[str]:
        names: List[str] = []
        for r in self.records:
            names.extend(n for n in r.errors if n not in names)
        return names

    def rates(self) -> Dict[str, List[Optional[float]]]:
        """log2(e_coarse / e_fine) between consecutive halvings; None elsewhere"""
        out: Dict[str, List[Optional[float]]] = {}
        ordered = sorted(self.records, key=lambda r: -r.h)
        for name in self.norms():
            col: List[Optional[float]] = [None]
            for coarse, fine in zip(ordered, ordered[1:]):
                ec, ef = coarse.errors.get(name), fine.errors.get(name)
                halved = abs(coarse.h / fine.h - 2.0) < 1e-9
                if not halved or ec is None or ef is None or ec <= 0 or ef <= 0:
                    col.append(None)
                else:
                    col.append(math.log2(ec / ef))
            out[name] = col
        return out

    def to_rows(self) -> List[ConvergenceRow]:
        ordered = sorted(self.records, key=lambda r: -r.h)
        rates = self.rates()
        return [ConvergenceRow(h=r.h, errors=r.errors, rates={n: rates[n][i] for n in rates})
                for i, r in enumerate(ordered)]


class StepDiagnostics(BaseModel):
    """Per-step monitor values written to diag.csv"""
    step: int = Field(..., description="Step index n")
    time: float = Field(..., description="t_n")
    dofs: int = Field(..., description="Unknowns of the step")
    l2_norm: float = Field(0.0, description="L2 norm of the solution on the physical domain")
    energy: float = Field(0.0, description="Accumulated stability quantity")
    jacobian_deviation: float = Field(0.0, description="max |J - I| of the one-step map")
    det_min: float = Field(1.0, description="Smallest Jacobian determinant")
    det_max: float = Field(1.0, description="Largest Jacobian determinant")
    velocity_max: float = Field(0.0, description="max |w| of the artificial velocity")
    residual: float = Field(0.0, description="Relative residual of the linear solve")
    hausdorff: Optional[float] = Field(None, description="Distance to the exact boundary, when known")
    l2_norm_outer: Optional[float] = Field(None, description="L2 norm of the outer-phase solution (two-phase runs)")
    energy_outer: Optional[float] = Field(None, description="Stability quantity of the outer phase (two-phase runs)")


class JacobianReport(BaseModel):
    """Jacobian statistics of a backward map sampled at quadrature nodes"""
    offset: int = Field(..., description="Map offset i of X^{n,n-i}")
    max_deviation: float = Field(..., description="max over samples of the infinity norm of J - I")
    det_min: float = Field(..., description="Smallest determinant")
    det_max: float = Field(..., description="Largest determinant")
    samples: int = Field(..., description="Number of sample points")


class SweepJob(BaseModel):
    """One level of a refinement sweep as tracked by the worker"""
    job_id: str = Field(..., description="Unique job identifier")
    config: CaseConfig = Field(..., description="Run configuration")
    status: str = Field(default="pending", description="Job status: pending, running, completed, failed")
    started_at: Optional[datetime] = Field(None, description="Start timestamp")
    finished_at: Optional[datetime] = Field(None, description="Finish timestamp")
    record: Optional[ErrorRecord] = Field(None, description="Errors (when completed)")
    error: Optional[str] = Field(None, description="Error message (when failed)")
