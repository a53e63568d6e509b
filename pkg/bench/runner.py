"""
Benchmark runs: build the case, drive the time loop, accumulate error norms and write outputs
"""
import csv
import logging
import time
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from aleufe.curve import CurveSet, MarkerSet, as_curve_set, fit_closed_spline
from aleufe.exceptions import MissingReference
from aleufe.fespace import FESpace, h1_seminorm_error, l2_error, volume_quadrature
from aleufe.linalg import LinearSolver
from aleufe.mesh import BackgroundMesh, classify_cells
from aleufe.models import CaseConfig, ErrorRecord, StepDiagnostics
from aleufe.quad import CUT, FULL, CutGeometry
from aleufe.solvers import (CoupledDriver, LevelSetTracker, MotionTracker, MovingHeatDriver, RunResult,
                            TwoPhaseDriver)
from aleufe.timestep import StepRecord
from bench.cases import CoupledCase, OnePhaseCase, TopologicalCase, TwoPhaseCase, get_case

logger = logging.getLogger(__name__)

NORMS = {
    "one-phase": ("eN",),
    "two-phase": ("eN",),
    "topological": ("e0", "e1"),
    "coupled": ("e0", "e1", "e0_omega", "e1_omega"),
}


# per-cell areas

def cell_areas(mesh: BackgroundMesh, curves, k: int) -> np.ndarray:
    """Area of the enclosed region in every background cell"""
    geometry = CutGeometry(mesh, as_curve_set(curves), order=2 * k + 2)
    cells = np.arange(mesh.n_cells)
    status = geometry.status(cells)
    areas = np.where(status == FULL, mesh.h ** 2, 0.0)
    for c in cells[status == CUT]:
        areas[c] = geometry.cell_area(int(c))
    return areas


def area_error(mesh: BackgroundMesh, a, b, k: int) -> float:
    """sum over cells of |area(A n K) - area(B n K)|"""
    return float(np.abs(cell_areas(mesh, a, k) - cell_areas(mesh, b, k)).sum())


# reference domains of the finest run

class ReferenceStore:
    """Marker dumps of a reference run keyed by time, with per-mesh area caches"""

    def __init__(self, directory):
        self.directory = Path(directory)

    @staticmethod
    def _key(t: float) -> str:
        return f"{int(round(t * 1e8)):012d}"

    def path(self, t: float) -> Path:
        return self.directory / f"ref_{self._key(t)}.csv"

    def save(self, t: float, curves) -> Path:
        self.directory.mkdir(parents=True, exist_ok=True)
        rows = [np.column_stack([np.full(len(c.markers), ci), c.markers.points, np.full(len(c.markers),
                                                                                          c.markers.target_spacing)])
                for ci, c in enumerate(as_curve_set(curves))]
        path = self.path(t)
        np.savetxt(path, np.vstack(rows), delimiter=',', header='curve,x,y,eta', comments='')
        return path

    def has(self, t: float) -> bool:
        return self.path(t).exists()

    def load(self, t: float) -> CurveSet:
        """
        Reference boundary at time t

        Raises:
            MissingReference: If the reference run did not store this time
        """
        path = self.path(t)
        if not path.exists():
            raise MissingReference(f"no reference boundary for t={t} in {self.directory}")
        data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
        curves = []
        for ci in np.unique(data[:, 0]).astype(int):
            rows = data[data[:, 0] == ci]
            curves.append(fit_closed_spline(MarkerSet(rows[:, 1:3], float(rows[0, 3]))))
        return CurveSet(curves)

    def areas(self, mesh: BackgroundMesh, t: float, k: int) -> np.ndarray:
        cache = self.directory / f"areas_n{mesh.n}_{self._key(t)}.npy"
        if cache.exists():
            return np.load(cache)
        areas = cell_areas(mesh, self.load(t), k)
        np.save(cache, areas)
        return areas


# error accumulation

class ErrorAccumulator:
    """
    Streaming error norms of one run

    Steps n >= k contribute tau-weighted squared norms; the final step also contributes the
    terminal L2 error and, for the coupled case, the area error against the initial disk.
    """

    def __init__(self, case_id: str, k: int, tau: float, mesh: BackgroundMesh, T: float,
                 reference: Optional[ReferenceStore] = None, nus=(1.0, 1.0), initial_curves=None):
        self.case_id = case_id
        self.k = k
        self.tau = tau
        self.mesh = mesh
        self.T = T
        self.reference = reference
        self.nus = nus
        self.initial_curves = initial_curves
        self.case = get_case(case_id)
        self.sums: Dict[str, float] = {"l2": 0.0, "h1": 0.0, "terminal": 0.0, "area": 0.0, "area_T": 0.0}
        self.steps = 0
        self.dofs = 0

    def _is_final(self, t: float) -> bool:
        return abs(t - self.T) < 1e-9

    def add(self, record: StepRecord) -> None:
        n, t = record.step, record.time
        final = self._is_final(t)
        if n < self.k and not final:
            return
        self.steps = n
        if self.case_id == "two-phase":
            self._add_two_phase(record, final)
        elif self.case_id == "coupled":
            self._add_coupled(record, final)
        else:
            self._add_scalar(record, final)

    def _add_scalar(self, record: StepRecord, final: bool) -> None:
        ctx = record.extras['context']
        t = record.time
        u = record.solution
        exact = self.case.problem().exact
        self.dofs = ctx.space.n_dofs
        l2 = l2_error(u, lambda X: exact(X, t), ctx.vq)
        h1 = h1_seminorm_error(u, lambda X: self.case.exact_gradient(X, t), ctx.vq)
        if record.step >= self.k:
            self.sums["l2"] += self.tau * l2 ** 2
            self.sums["h1"] += self.tau * h1 ** 2
        if final:
            self.sums["terminal"] = l2 ** 2

    def _add_two_phase(self, record: StepRecord, final: bool) -> None:
        ctxs = record.extras['contexts']
        t = record.time
        exacts = (self.case.problem().exact1, self.case.problem().exact2)
        self.dofs = sum(c.space.n_dofs for c in ctxs)
        terminal = 0.0
        for j in range(2):
            u, vq = record.solution[j], ctxs[j].vq
            grad = self.case.gradients[j]
            if record.step >= self.k:
                h1 = h1_seminorm_error(u, lambda X, g=grad: g(X, t), vq)
                self.sums["h1"] += self.tau * self.nus[j] * h1 ** 2
            if final:
                terminal += l2_error(u, lambda X, e=exacts[j]: e(X, t), vq) ** 2
        if final:
            self.sums["terminal"] = terminal

    def _add_coupled(self, record: StepRecord, final: bool) -> None:
        ctx = record.extras['context']
        t = record.time
        v = record.solution
        self.dofs = 2 * ctx.space.n_dofs
        exact = CoupledCase().problem().exact
        vq, extrapolate = ctx.vq, False
        if self.reference is not None:
            ref_curves = self.reference.load(t)
            ref_space = FESpace(self.mesh, classify_cells(self.mesh, ref_curves, self.tau), self.k)
            vq = volume_quadrature(ref_space, CutGeometry(self.mesh, ref_curves, order=2 * self.k + 2))
            extrapolate = True
            if record.step >= self.k:
                own = cell_areas(self.mesh, record.curves, self.k)
                self.sums["area"] += self.tau * float(np.abs(self.reference.areas(self.mesh, t, self.k)
                                                             - own).sum()) ** 2
        if record.step >= self.k:
            l2 = l2_error(v, lambda X: exact(X, t), vq, extrapolate=extrapolate)
            h1 = h1_seminorm_error(v, lambda X: CoupledCase.exact_gradient(X, t), vq, extrapolate=extrapolate)
            self.sums["l2"] += self.tau * l2 ** 2
            self.sums["h1"] += self.tau * h1 ** 2
        if final and self.initial_curves is not None:
            self.sums["area_T"] = area_error(self.mesh, self.initial_curves, record.curves, self.k)

    def result(self, norms: Optional[Sequence[str]] = None) -> Dict[str, float]:
        """
        Final norms of the run

        Raises:
            MissingReference: If e1_omega is requested without a reference store
        """
        norms = norms or NORMS[self.case_id]
        out = {}
        for name in norms:
            if name == "eN":
                out[name] = float(np.sqrt(self.sums["terminal"] + self.sums["h1"]))
            elif name == "e0":
                out[name] = float(np.sqrt(self.sums["l2"]))
            elif name == "e1":
                out[name] = float(np.sqrt(self.sums["h1"]))
            elif name == "e0_omega":
                out[name] = self.sums["area_T"]
            elif name == "e1_omega":
                if self.reference is None:
                    raise MissingReference("e1_omega needs a reference run (set reference_dir)")
                out[name] = float(np.sqrt(self.sums["area"]))
            else:
                raise ValueError(f"unknown norm '{name}'")
        return out


def error_norms(records: Iterable[StepRecord], case_id: str, k: int, tau: float, mesh: BackgroundMesh, T: float,
                reference: Optional[ReferenceStore] = None, nus=(1.0, 1.0), initial_curves=None,
                norms: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """
    Error norms of a sequence of step records against the case's exact solution

    Args:
        records: Step records in time order (every step of the run)
        case_id: Benchmark case
        k: Order
        tau: Time step
        mesh: Background mesh of the run
        T: Final time
        reference: Reference boundaries for the coupled case
        nus: Phase viscosities (two-phase weighting)
        initial_curves: Exact boundary at T for the coupled round trip
        norms: Subset of norm names (defaults to the case's norms)

    Returns:
        Norm name -> value

    Raises:
        MissingReference: For e1_omega without a reference
    """
    acc = ErrorAccumulator(case_id, k, tau, mesh, T, reference, nus, initial_curves)
    for record in records:
        acc.add(record)
    return acc.result(norms)


# outputs

def write_curve_snapshot(path, curves, n_samples: int = 400) -> Path:
    """Write (curve, parameter, x, y) samples of every component"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks = []
    for ci, c in enumerate(as_curve_set(curves)):
        t, pts = c.sample(n_samples)
        blocks.append(np.column_stack([np.full(len(t), ci), t, pts]))
    np.savetxt(path, np.vstack(blocks), delimiter=',', header='curve,parameter,x,y', comments='')
    return path


def write_diagnostics(path, rows: List[StepDiagnostics]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(StepDiagnostics.model_fields)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump())
    return path


# runs

def _build_driver(cfg: CaseConfig, mesh: BackgroundMesh, solver: LinearSolver, on_record):
    case = get_case(cfg.case)
    k, tau = cfg.k, cfg.tau
    if isinstance(case, OnePhaseCase):
        tracker = MotionTracker(case.motion, case.markers(cfg.eta), tau, k)
        return MovingHeatDriver(mesh, tracker, case.problem(), k, tau, cfg.gamma0, solver, on_record=on_record,
                                measure_boundary=cfg.snapshot_every > 0)
    if isinstance(case, TopologicalCase):
        tracker = LevelSetTracker(case.level_set(cfg.h), cfg.eta)
        return MovingHeatDriver(mesh, tracker, case.problem(), k, tau, cfg.gamma0, solver, on_record=on_record)
    if isinstance(case, TwoPhaseCase):
        case = TwoPhaseCase(nu1=cfg.nu1 or case.nu1, nu2=cfg.nu2 or case.nu2)
        tracker = MotionTracker(case.motion(min(tau / 4, 1.0 / 256)), case.markers(cfg.eta), tau, k,
                                velocity=case.velocity)
        return TwoPhaseDriver(mesh, tracker, case.problem(), k, tau, cfg.gamma0, solver, on_record=on_record)
    return CoupledDriver(mesh, case.markers(cfg.eta), case.problem(), k, tau,
                         exact_motion=case.motion(min(tau / 4, 1.0 / 256)), solver=solver, gamma0=cfg.gamma0,
                         on_record=on_record)


def run_case(cfg: CaseConfig, save_reference: Optional[str] = None) -> ErrorRecord:
    """
    Run one benchmark configuration end to end

    Args:
        cfg: Validated run configuration
        save_reference: Directory to store every step's boundary as a reference run

    Returns:
        ErrorRecord with the case's norms

    Raises:
        RunAborted: With the failing step when the time loop breaks down
        MissingReference: If the coupled case's reference does not cover a step time
    """
    start = time.time()
    T = cfg.T or get_case(cfg.case).T
    mesh = BackgroundMesh((0.0, 0.0), 1.0, cfg.n_cells)
    solver = LinearSolver(method=cfg.solver)
    case = get_case(cfg.case)
    nus = (cfg.nu1 or getattr(case, "nu1", 1.0), cfg.nu2 or getattr(case, "nu2", 1.0))
    reference = ReferenceStore(cfg.reference_dir) if cfg.reference_dir and cfg.case == "coupled" else None
    initial = None
    if cfg.case == "coupled":
        initial = fit_closed_spline(case.markers(cfg.eta / 4))
    accumulator = ErrorAccumulator(cfg.case, cfg.k, cfg.tau, mesh, T, reference, nus, initial)
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    store = ReferenceStore(save_reference) if save_reference else None

    def on_record(record: StepRecord) -> None:
        if store is not None:
            store.save(record.time, record.curves)
        else:
            accumulator.add(record)
        if out_dir is not None and cfg.snapshot_every and record.step % cfg.snapshot_every == 0:
            write_curve_snapshot(out_dir / "snapshots" / f"step_{record.step}.csv", record.curves)

    logger.info(f"running {cfg.label} to T={T} ({int(round(T / cfg.tau))} steps)")
    driver = _build_driver(cfg, mesh, solver, on_record)
    result: RunResult = driver.run(T)
    if out_dir is not None:
        write_diagnostics(out_dir / "diag.csv", result.diagnostics)
    errors = {} if store is not None else accumulator.result(_norms_for(cfg))
    seconds = time.time() - start
    logger.info(f"{cfg.label}: {', '.join(f'{k}={v:.3e}' for k, v in errors.items())} in {seconds:.1f}s")
    return ErrorRecord(h=cfg.h, tau=cfg.tau, errors=errors, steps=accumulator.steps or len(result.diagnostics) - 1,
                       dofs=accumulator.dofs, seconds=seconds)


def _norms_for(cfg: CaseConfig) -> Sequence[str]:
    norms = NORMS[cfg.case]
    if cfg.case == "coupled" and not cfg.reference_dir:
        logger.warning("⚠️  no reference run: e0/e1 on the tracked domains, e1_omega skipped")
        return tuple(n for n in norms if n != "e1_omega")
    return norms


def run_reference(cfg: CaseConfig, directory: str) -> Path:
    """Run the configuration and store its boundaries as the reference domain sequence"""
    ref_cfg = cfg.model_copy(update={"reference_dir": None, "output_dir": None, "snapshot_every": 0})
    run_case(ref_cfg, save_reference=directory)
    logger.info(f"reference boundaries for {cfg.label} stored in {directory}")
    return Path(directory)
