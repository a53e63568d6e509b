"""
Time-stepping drivers: heat equation on a moving domain, the coupled domain-PDE problem
and the two-phase interface problem, plus the fixed-domain reference driver.
"""
import logging
import time as _time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

import config
from aleufe.alemap import (ArtificialVelocity, DiscreteALEMap, artificial_velocity, jacobian_diagnostics,
                           solve_one_step_map, two_phase_one_step_map)
from aleufe.curve import (ClosedCurve, CurveSet, LevelSetGeometry, MarkerSet, as_curve_set, extract_contour,
                          fit_closed_spline, hausdorff_distance, resample)
from aleufe.exceptions import AleUfeError, DegenerateCurve, RunAborted
from aleufe.fespace import (AssembledSystem, FEFunction, FESpace, apply_dirichlet, assemble_boundary_load,
                            assemble_diffusion_nitsche, assemble_ghost_penalty, assemble_history_rhs,
                            assemble_load, assemble_mass_and_transport, assemble_nitsche_rhs, assemble_stiffness,
                            assemble_two_phase, assemble_two_phase_rhs, interface_quadrature, l2_error,
                            mesh_energy_norm, volume_quadrature)
from aleufe.flowmap import (BacktrackBoundaryMap, BoundaryMap, BoundaryMapSamples, ClosestPointBoundaryMap,
                            MarkerSplineBoundaryMap, MarkerTrajectories, Motion, MotionBoundaryMap,
                            TransferBoundaryMap, VelocityField, build_segment_transfer, sbdf_update_markers)
from aleufe.linalg import LinearSolver, block_matrix, factorize, relative_residual, solve_with
from aleufe.mesh import ActiveCover, BackgroundMesh, classify_cells, two_phase_covers
from aleufe.models import StepDiagnostics
from aleufe.quad import CutGeometry, InterfaceQuadrature
from aleufe.timestep import BDFScheme, SBDFScheme, SolutionHistory, StepRecord, bdf_coeffs, sbdf_coeffs

logger = logging.getLogger(__name__)

SpaceTimeFunction = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class StepContext:
    """Geometry, discretization and maps of one phase at one step"""
    step: int
    time: float
    curves: CurveSet
    cover: ActiveCover
    space: FESpace
    geometry: CutGeometry
    vq: object
    iq: InterfaceQuadrature
    ale: Optional[DiscreteALEMap] = None
    velocity: Optional[ArtificialVelocity] = None
    system: Optional[AssembledSystem] = None
    residual: float = 0.0

    @property
    def tau(self) -> float:
        return self.ale.tau if self.ale is not None else 0.0


def build_context(mesh: BackgroundMesh, curves: CurveSet, cover: ActiveCover, step: int, t: float, k: int,
                  geometry: Optional[CutGeometry] = None) -> StepContext:
    geometry = geometry or CutGeometry(mesh, curves, order=2 * k + config.QUAD_ORDER_OFFSET)
    space = FESpace(mesh, cover, k, step=step)
    vq = volume_quadrature(space, geometry)
    iq = interface_quadrature(space, geometry)
    return StepContext(step=step, time=t, curves=curves, cover=cover, space=space, geometry=geometry, vq=vq, iq=iq)


def solve_linear(system: AssembledSystem, solver: Optional[LinearSolver] = None) -> np.ndarray:
    """
    Solve an assembled system with the residual contract of the solver settings

    Raises:
        Singular: If the direct factorization breaks down
        NoConvergence: If the iterative path stops early
    """
    return solve_with(solver or LinearSolver(), system.matrix, system.rhs)


def _transport_field(ctx: StepContext) -> Optional[FEFunction]:
    return ctx.velocity.field if ctx.velocity is not None else None


def heat_step(ctx: StepContext, history: SolutionHistory, f: SpaceTimeFunction, g_D: SpaceTimeFunction,
              scheme: BDFScheme, gamma0: float = config.GAMMA0, solver: Optional[LinearSolver] = None,
              nu: float = 1.0) -> FEFunction:
    """
    One BDF-k step of the heat equation along the discrete ALE map

    [(lambda_0/tau) M - T + A] u = (f, v) + history + Nitsche(g_D)

    Args:
        ctx: Step context with maps and artificial velocity set (maps None for a fixed domain)
        history: Last k solutions
        f: Source f(X, t)
        g_D: Dirichlet data g_D(X, t) on the boundary
        scheme: BDF coefficients
        gamma0: Nitsche penalty
        solver: Linear solver settings
        nu: Diffusion coefficient

    Returns:
        Solution on the step's space
    """
    tau = history.tau
    space = ctx.space
    system = ctx.system or assemble_diffusion_nitsche(space, ctx.geometry, gamma0, nu, ctx.vq, ctx.iq)
    matrix = system.matrix + assemble_mass_and_transport(space, ctx.geometry, _transport_field(ctx),
                                                         scheme.lambda0, tau, ctx.vq)
    rhs = assemble_load(space, ctx.vq, f(ctx.vq.points, ctx.time))
    rhs += assemble_history_rhs(space, history, ctx.ale, scheme.history_coefficients(), tau, ctx.vq)
    if len(ctx.iq):
        rhs += assemble_nitsche_rhs(space, ctx.geometry, g_D(ctx.iq.nodes, ctx.time), gamma0, nu, ctx.iq)
    coeffs = solve_with(solver or LinearSolver(), matrix, rhs)
    ctx.residual = relative_residual(matrix, coeffs, rhs)
    return FEFunction(space, coeffs)


def coupled_step(ctx: StepContext, history: SolutionHistory, f: SpaceTimeFunction,
                 g_N: Callable[[np.ndarray, float, np.ndarray], np.ndarray], sbdf: SBDFScheme,
                 trajectories: Optional[MarkerTrajectories] = None,
                 solver: Optional[LinearSolver] = None) -> Tuple[FEFunction, Optional[BoundaryMapSamples]]:
    """
    One step of the vector heat equation with Neumann data, then the SBDF marker update

    Args:
        ctx: Step context
        history: Last k velocity solutions
        f: Source f(X, t) -> (M, 2)
        g_N: Neumann data g_N(X, t, normals) -> (M, 2)
        sbdf: SBDF coefficients (implicit row used for the PDE)
        trajectories: Markers of the current boundary with their past positions
        solver: Linear solver settings

    Returns:
        Tuple of (velocity field, forward marker samples for the next boundary or None)
    """
    tau = history.tau
    space = ctx.space
    lambdas = sbdf.a_float
    matrix = (assemble_stiffness(space, ctx.vq) + assemble_ghost_penalty(space)
              + assemble_mass_and_transport(space, ctx.geometry, _transport_field(ctx), lambdas[0], tau, ctx.vq))
    rhs = assemble_load(space, ctx.vq, f(ctx.vq.points, ctx.time))
    rhs += assemble_history_rhs(space, history, ctx.ale, lambdas[1:], tau, ctx.vq)
    if len(ctx.iq):
        rhs += assemble_boundary_load(space, ctx.iq, g_N(ctx.iq.nodes, ctx.time, ctx.iq.normals))
    solver = solver or LinearSolver()
    factors = factorize(matrix) if solver.method == "direct" else None
    coeffs = solve_with(solver, matrix, rhs, factors)
    ctx.residual = relative_residual(matrix, coeffs, rhs)
    v = FEFunction(space, coeffs)
    forward = None
    if trajectories is not None:
        velocities = _velocity_history(v, history, sbdf.k)
        forward = sbdf_update_markers(trajectories.positions, velocities, tau, sbdf.k)
    return v, forward


def _velocity_history(v: FEFunction, history: SolutionHistory, k: int) -> List[Callable[[np.ndarray], np.ndarray]]:
    """v^n, v^{n-1}, .. v^{n-k+1} as point evaluators on their own covers"""
    fields = [v] + [history.back(i).solution for i in range(1, k)]
    return [lambda X, u=u: u.evaluate(X) for u in fields]


@dataclass
class TwoPhaseData:
    """Sources, interface jumps and outer-box values of the two-phase problem"""
    f1: SpaceTimeFunction
    f2: SpaceTimeFunction
    g_D: SpaceTimeFunction
    g_N: Callable[[np.ndarray, float, np.ndarray], np.ndarray]
    outer: SpaceTimeFunction


def two_phase_step(ctxs: Tuple[StepContext, StepContext], histories: Tuple[SolutionHistory, SolutionHistory],
                   data: TwoPhaseData, scheme: BDFScheme, nus: Tuple[float, float],
                   gamma0: float = config.GAMMA0,
                   solver: Optional[LinearSolver] = None) -> Tuple[FEFunction, FEFunction]:
    """
    One coupled BDF-k step of both phases with averaged Nitsche interface terms

    Args:
        ctxs: Phase contexts (shared cut geometry)
        histories: Past solutions per phase
        data: Sources and jump data
        scheme: BDF coefficients
        nus: (nu1, nu2)
        gamma0: Interface penalty
        solver: Linear solver settings

    Returns:
        Tuple (u1, u2)
    """
    tau = histories[0].tau
    spaces = (ctxs[0].space, ctxs[1].space)
    n1 = spaces[0].n_dofs
    iq = ctxs[0].iq
    system = assemble_two_phase(spaces, ctxs[0].geometry, nus, gamma0, (ctxs[0].vq, ctxs[1].vq), iq)
    blocks, rhs_parts = [], []
    for ctx, hist, f in zip(ctxs, histories, (data.f1, data.f2)):
        blocks.append(assemble_mass_and_transport(ctx.space, ctx.geometry, _transport_field(ctx), scheme.lambda0,
                                                  tau, ctx.vq).csr)
        rhs = assemble_load(ctx.space, ctx.vq, f(ctx.vq.points, ctx.time))
        rhs += assemble_history_rhs(ctx.space, hist, ctx.ale, scheme.history_coefficients(), tau, ctx.vq)
        rhs_parts.append(rhs)
    matrix = system.matrix + block_matrix([[blocks[0], None], [None, blocks[1]]])
    rhs = np.concatenate(rhs_parts)
    t = ctxs[0].time
    if len(iq):
        rhs += assemble_two_phase_rhs(spaces, iq, nus, g_dirichlet=data.g_D(iq.nodes, t),
                                      g_neumann=data.g_N(iq.nodes, t, iq.normals), gamma0=gamma0)
    outer = spaces[1].outer_dofs
    matrix, rhs = apply_dirichlet(matrix, rhs, outer + n1, data.outer(spaces[1].nodes[outer], t))
    coeffs = solve_with(solver or LinearSolver(), matrix, rhs)
    ctxs[0].residual = relative_residual(matrix, coeffs, rhs)
    return FEFunction(spaces[0], coeffs[:n1]), FEFunction(spaces[1], coeffs[n1:])


# boundary trackers

class BoundaryTracker:
    """Supplies the discrete boundary of every step and the backward boundary map onto the previous one"""

    def start(self, t0: float) -> CurveSet:
        raise NotImplementedError

    def advance(self, t: float) -> CurveSet:
        raise NotImplementedError

    def boundary_map(self) -> BoundaryMap:
        raise NotImplementedError

    def exact_curves(self, t: float) -> Optional[CurveSet]:
        return None


class MotionTracker(BoundaryTracker):
    """Markers carried by a prescribed motion; backward map exact or by RK backtracking of a velocity"""

    def __init__(self, motion: Motion, markers: MarkerSet, tau: float, k: int,
                 velocity: Optional[VelocityField] = None):
        self.motion = motion
        self.markers0 = markers
        self.tau = tau
        self.k = k
        self.velocity = velocity
        self.markers = markers
        self.t = 0.0
        self.t_prev = 0.0
        self.curve: Optional[ClosedCurve] = None

    def start(self, t0: float) -> CurveSet:
        self.t = self.t_prev = t0
        self.markers = self.markers0
        self.curve = fit_closed_spline(self.markers)
        return as_curve_set(self.curve)

    def advance(self, t: float) -> CurveSet:
        self.markers = MarkerSet(self.motion.advance(self.markers.points, self.t, t), self.markers.target_spacing)
        self.t_prev, self.t = self.t, t
        self.curve = fit_closed_spline(self.markers)
        if self.markers.needs_resample():
            logger.warning(f"⚠️  marker gaps out of range at t={t:.4f}, resampling")
            self.markers = resample(self.curve, self.markers.target_spacing)
            self.curve = fit_closed_spline(self.markers)
        return as_curve_set(self.curve)

    def boundary_map(self) -> BoundaryMap:
        if self.velocity is not None:
            return BacktrackBoundaryMap(self.velocity, self.t, self.t - self.t_prev, self.k + 1)
        return MotionBoundaryMap(self.motion, self.t, self.t_prev)

    def exact_curves(self, t: float) -> Optional[CurveSet]:
        dense = resample(fit_closed_spline(self.markers0), self.markers0.target_spacing / 8)
        moved = MarkerSet(self.motion.advance(dense.points, 0.0, t), dense.target_spacing)
        return as_curve_set(fit_closed_spline(moved))


class LevelSetTracker(BoundaryTracker):
    """Boundary extracted from a level set each step; backward map by closest point"""

    def __init__(self, level_set: LevelSetGeometry, eta: float):
        self.level_set = level_set
        self.eta = eta
        self.curves: Optional[CurveSet] = None
        self.previous: Optional[CurveSet] = None

    def _extract(self, t: float) -> CurveSet:
        return CurveSet([fit_closed_spline(m) for m in extract_contour(self.level_set, t, self.eta)])

    def start(self, t0: float) -> CurveSet:
        self.curves = self._extract(t0)
        return self.curves

    def advance(self, t: float) -> CurveSet:
        self.previous = self.curves
        self.curves = self._extract(t)
        if self.previous is not None and len(self.curves) != len(self.previous):
            logger.info(f"topology change at t={t:.4f}: {len(self.previous)} -> {len(self.curves)} component(s)")
        return self.curves

    def boundary_map(self) -> BoundaryMap:
        return ClosestPointBoundaryMap(self.previous)


# drivers

@dataclass
class HeatProblem:
    """Manufactured data of the heat equation: u_t - nu Lap u = f, u = g_D on the boundary"""
    source: SpaceTimeFunction
    dirichlet: SpaceTimeFunction
    exact: SpaceTimeFunction
    nu: float = 1.0


@dataclass
class RunResult:
    """Final records and per-step diagnostics of a run"""
    records: List[StepRecord]
    diagnostics: List[StepDiagnostics] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final(self) -> StepRecord:
        return self.records[-1]


def _n_steps(T: float, tau: float) -> int:
    n = int(round(T / tau))
    if abs(n * tau - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a multiple of tau={tau}")
    return n


class _Monitor:
    """Stability quantity |u^m|^2 + sum tau |||u^n|||^2 and per-step diagnostics"""

    def __init__(self, tau: float, callback: Optional[Callable[[StepDiagnostics], None]] = None):
        self.tau = tau
        self.accumulated = 0.0
        self.accumulated_outer = 0.0
        self.rows: List[StepDiagnostics] = []
        self.callback = callback

    def record(self, ctx: StepContext, u: FEFunction, hausdorff: Optional[float] = None,
               outer: Optional[Tuple[StepContext, FEFunction]] = None) -> StepDiagnostics:
        """Row of step ctx.step; outer carries the second phase of a two-phase step"""
        l2 = l2_error(u, None, ctx.vq)
        self.accumulated += self.tau * mesh_energy_norm(u, ctx.vq, ctx.iq)
        dofs = ctx.space.n_dofs * u.components
        l2_outer = energy_outer = None
        if outer is not None:
            ctx2, u2 = outer
            l2_outer = l2_error(u2, None, ctx2.vq)
            self.accumulated_outer += self.tau * mesh_energy_norm(u2, ctx2.vq, ctx2.iq)
            energy_outer = l2_outer ** 2 + self.accumulated_outer
            dofs += ctx2.space.n_dofs * u2.components
        jac = jacobian_diagnostics(ctx.ale, 1, ctx.vq.points) if ctx.ale is not None else None
        row = StepDiagnostics(step=ctx.step, time=ctx.time, dofs=dofs, l2_norm=l2,
                              energy=l2 ** 2 + self.accumulated,
                              jacobian_deviation=jac.max_deviation if jac else 0.0,
                              det_min=jac.det_min if jac else 1.0, det_max=jac.det_max if jac else 1.0,
                              velocity_max=ctx.velocity.max_norm if ctx.velocity is not None else 0.0,
                              residual=ctx.residual, hausdorff=hausdorff,
                              l2_norm_outer=l2_outer, energy_outer=energy_outer)
        self.rows.append(row)
        logger.info(f"step {ctx.step:5d}  t={ctx.time:.5f}  dofs={row.dofs}  |u|={l2:.6e}  "
                    f"|J-I|={row.jacobian_deviation:.3e}")
        if self.callback:
            self.callback(row)
        return row


class MovingHeatDriver:
    """BDF-k heat equation on a moving domain; the first k values come from the exact solution"""

    def __init__(self, mesh: BackgroundMesh, tracker: BoundaryTracker, problem: HeatProblem, k: int, tau: float,
                 gamma0: float = config.GAMMA0, solver: Optional[LinearSolver] = None,
                 on_step: Optional[Callable[[StepDiagnostics], None]] = None,
                 on_record: Optional[Callable[[StepRecord], None]] = None, measure_boundary: bool = False):
        self.mesh = mesh
        self.tracker = tracker
        self.problem = problem
        self.k = k
        self.tau = tau
        self.gamma0 = gamma0
        self.solver = solver or LinearSolver()
        self.scheme = bdf_coeffs(k)
        self.on_step = on_step
        self.on_record = on_record
        self.measure_boundary = measure_boundary

    def _step(self, n: int, t: float, curves: CurveSet, history: SolutionHistory,
              previous: Optional[DiscreteALEMap], monitor: _Monitor) -> StepRecord:
        cover = classify_cells(self.mesh, curves, self.tau)
        ctx = build_context(self.mesh, curves, cover, n, t, self.k)
        ctx.system = assemble_diffusion_nitsche(ctx.space, ctx.geometry, self.gamma0, self.problem.nu, ctx.vq, ctx.iq)
        if previous is None:
            ctx.ale = DiscreteALEMap(n, t, self.tau)
        else:
            # the map extension reuses the diffusion system only for unit viscosity
            shared = ctx.system if self.problem.nu == 1.0 else None
            one_step = solve_one_step_map(ctx.space, ctx.geometry, self.tracker.boundary_map(), self.gamma0,
                                          system=shared, iq=ctx.iq, solver=self.solver)
            ctx.ale = DiscreteALEMap(n, t, self.tau, one_step, previous)
            ctx.ale.prune(self.k)
        if n < self.k:
            u = ctx.space.interpolate(lambda X: self.problem.exact(X, t))
        else:
            ctx.velocity = artificial_velocity(ctx.ale, self.k, ctx.space)
            u = heat_step(ctx, history, self.problem.source, self.problem.dirichlet, self.scheme, self.gamma0,
                          self.solver, self.problem.nu)
        hd = None
        if self.measure_boundary:
            exact = self.tracker.exact_curves(t)
            hd = hausdorff_distance(curves[0], exact[0], n_samples=2000) if exact is not None else None
        monitor.record(ctx, u, hausdorff=hd)
        return StepRecord(step=n, time=t, solution=u, space=ctx.space, cover=cover, curves=curves,
                          one_step_map=ctx.ale, extras={'context': ctx})

    def run(self, T: float) -> RunResult:
        """
        Run the time loop to T

        Raises:
            RunAborted: With the failing step, original error chained
        """
        start = _time.time()
        steps = _n_steps(T, self.tau)
        history = SolutionHistory(self.k, self.tau)
        monitor = _Monitor(self.tau, self.on_step)
        previous = None
        curves = self.tracker.start(0.0)
        for n in range(steps + 1):
            t = n * self.tau
            try:
                if n:
                    curves = self.tracker.advance(t)
                record = self._step(n, t, curves, history, previous, monitor)
            except AleUfeError as e:
                raise RunAborted(n, f"{type(e).__name__}: {e}") from e
            history.push(record)
            previous = record.one_step_map
            if self.on_record:
                self.on_record(record)
        return RunResult(records=history.records(), diagnostics=monitor.rows, seconds=_time.time() - start)


class FixedDomainDriver:
    """Plain BDF-k cut-FEM heat solver on a stationary domain (no maps, no transport)"""

    def __init__(self, mesh: BackgroundMesh, curves, problem: HeatProblem, k: int, tau: float,
                 gamma0: float = config.GAMMA0, solver: Optional[LinearSolver] = None):
        self.mesh = mesh
        self.curves = as_curve_set(curves)
        self.problem = problem
        self.k = k
        self.tau = tau
        self.gamma0 = gamma0
        self.solver = solver or LinearSolver()
        self.scheme = bdf_coeffs(k)

    def run(self, T: float) -> RunResult:
        start = _time.time()
        history = SolutionHistory(self.k, self.tau)
        monitor = _Monitor(self.tau)
        cover = classify_cells(self.mesh, self.curves, self.tau)
        geometry = CutGeometry(self.mesh, self.curves, order=2 * self.k + config.QUAD_ORDER_OFFSET)
        for n in range(_n_steps(T, self.tau) + 1):
            t = n * self.tau
            ctx = build_context(self.mesh, self.curves, cover, n, t, self.k, geometry)
            if n < self.k:
                u = ctx.space.interpolate(lambda X: self.problem.exact(X, t))
            else:
                u = heat_step(ctx, history, self.problem.source, self.problem.dirichlet, self.scheme,
                              self.gamma0, self.solver, self.problem.nu)
            monitor.record(ctx, u)
            history.push(StepRecord(step=n, time=t, solution=u, space=ctx.space, cover=cover, curves=self.curves,
                                    extras={'context': ctx}))
        return RunResult(records=history.records(), diagnostics=monitor.rows, seconds=_time.time() - start)


@dataclass
class CoupledProblem:
    """Vector heat equation whose solution moves its own boundary"""
    source: SpaceTimeFunction
    neumann: Callable[[np.ndarray, float, np.ndarray], np.ndarray]
    exact: SpaceTimeFunction


class CoupledDriver:
    """
    Domain and PDE coupled through the boundary velocity

    The boundary of step n+1 comes from the SBDF update with the velocities of steps n..n-k+1;
    the first k boundaries and velocities are exact.
    """

    def __init__(self, mesh: BackgroundMesh, markers: MarkerSet, problem: CoupledProblem, k: int, tau: float,
                 exact_motion: Motion, boundary_data: str = config.BOUNDARY_DATA,
                 solver: Optional[LinearSolver] = None, gamma0: float = config.GAMMA0,
                 on_step: Optional[Callable[[StepDiagnostics], None]] = None,
                 on_record: Optional[Callable[[StepRecord], None]] = None):
        if boundary_data not in ("spline", "transfer"):
            raise ValueError(f"unknown boundary data mode '{boundary_data}'")
        self.mesh = mesh
        self.markers = markers
        self.problem = problem
        self.k = k
        self.tau = tau
        self.exact_motion = exact_motion
        self.boundary_data = boundary_data
        self.solver = solver or LinearSolver()
        self.gamma0 = gamma0
        self.sbdf = sbdf_coeffs(k)
        self.on_step = on_step
        self.on_record = on_record

    def _fit(self, trajectories: MarkerTrajectories) -> ClosedCurve:
        curve = fit_closed_spline(trajectories.markers)
        if not np.allclose(curve.markers.points[1], trajectories.markers.points[1]):
            raise DegenerateCurve("marker orientation flipped during the update")
        if trajectories.markers.needs_resample():
            trajectories.resample(curve)
            curve = fit_closed_spline(trajectories.markers)
        return curve

    def run(self, T: float) -> RunResult:
        start = _time.time()
        steps = _n_steps(T, self.tau)
        history = SolutionHistory(self.k, self.tau)
        monitor = _Monitor(self.tau, self.on_step)
        trajectories = MarkerTrajectories(self.markers, depth=self.k - 1)
        previous: Optional[DiscreteALEMap] = None
        transfer_map: Optional[BoundaryMap] = None
        forward: Optional[BoundaryMapSamples] = None
        for n in range(steps + 1):
            t = n * self.tau
            try:
                if n:
                    if forward is None:
                        new_points = self.exact_motion.advance(trajectories.markers.points, t - self.tau, t)
                    else:
                        new_points = forward.mapped
                    trajectories.advance(new_points)
                curve = self._fit(trajectories)
                curves = as_curve_set(curve)
                cover = classify_cells(self.mesh, curves, self.tau)
                ctx = build_context(self.mesh, curves, cover, n, t, self.k)
                if previous is None:
                    ctx.ale = DiscreteALEMap(n, t, self.tau)
                else:
                    if self.boundary_data == "transfer" and transfer_map is not None:
                        bmap = transfer_map
                    else:
                        bmap = MarkerSplineBoundaryMap(curve, [trajectories.past[0]])
                    one_step = solve_one_step_map(ctx.space, ctx.geometry, bmap, self.gamma0, iq=ctx.iq,
                                                  solver=self.solver)
                    ctx.ale = DiscreteALEMap(n, t, self.tau, one_step, previous)
                    ctx.ale.prune(self.k)
                if n < self.k:
                    v = ctx.space.interpolate(lambda X: self.problem.exact(X, t))
                    forward = None
                    if n == self.k - 1:
                        velocities = _velocity_history(v, history, self.k)
                        forward = sbdf_update_markers(trajectories.positions, velocities, self.tau, self.k)
                else:
                    ctx.velocity = artificial_velocity(ctx.ale, self.k, ctx.space)
                    v, forward = coupled_step(ctx, history, self.problem.source, self.problem.neumann, self.sbdf,
                                              trajectories, self.solver)
                transfer_map = None
                if forward is not None and self.boundary_data == "transfer":
                    transfer_map = TransferBoundaryMap(
                        build_segment_transfer(curve, self.mesh, self._forward_points(curve, trajectories, v, history),
                                               self.k))
            except AleUfeError as e:
                raise RunAborted(n, f"{type(e).__name__}: {e}") from e
            monitor.record(ctx, v)
            record = StepRecord(step=n, time=t, solution=v, space=ctx.space, cover=cover, curves=curves,
                                one_step_map=ctx.ale, extras={'context': ctx, 'markers': trajectories.markers})
            history.push(record)
            previous = ctx.ale
            if self.on_record:
                self.on_record(record)
        return RunResult(records=history.records(), diagnostics=monitor.rows, seconds=_time.time() - start)

    def _forward_points(self, curve: ClosedCurve, trajectories: MarkerTrajectories, v: FEFunction,
                        history: SolutionHistory):
        velocities = _velocity_history(v, history, self.k)

        def forward(points: np.ndarray) -> np.ndarray:
            params = curve.project(points).params
            positions = trajectories.history_at(curve, params)
            return sbdf_update_markers(positions, velocities, self.tau, self.k).mapped

        return forward


@dataclass
class TwoPhaseProblem:
    """Manufactured two-phase data"""
    data: TwoPhaseData
    exact1: SpaceTimeFunction
    exact2: SpaceTimeFunction
    nus: Tuple[float, float]


class TwoPhaseDriver:
    """Both phases on covers of the same background mesh, interface carried by a prescribed tracker"""

    def __init__(self, mesh: BackgroundMesh, tracker: BoundaryTracker, problem: TwoPhaseProblem, k: int,
                 tau: float, gamma0: float = config.GAMMA0, solver: Optional[LinearSolver] = None,
                 on_step: Optional[Callable[[StepDiagnostics], None]] = None,
                 on_record: Optional[Callable[[StepRecord], None]] = None):
        self.mesh = mesh
        self.tracker = tracker
        self.problem = problem
        self.k = k
        self.tau = tau
        self.gamma0 = gamma0
        self.solver = solver or LinearSolver()
        self.scheme = bdf_coeffs(k)
        self.on_step = on_step
        self.on_record = on_record

    def run(self, T: float) -> RunResult:
        start = _time.time()
        steps = _n_steps(T, self.tau)
        histories = (SolutionHistory(self.k, self.tau), SolutionHistory(self.k, self.tau))
        monitor = _Monitor(self.tau, self.on_step)
        previous: List[Optional[DiscreteALEMap]] = [None, None]
        curves = self.tracker.start(0.0)
        exacts = (self.problem.exact1, self.problem.exact2)
        records: List[StepRecord] = []
        for n in range(steps + 1):
            t = n * self.tau
            try:
                if n:
                    curves = self.tracker.advance(t)
                covers = two_phase_covers(self.mesh, curves, self.tau)
                geometry = CutGeometry(self.mesh, curves, order=2 * self.k + config.QUAD_ORDER_OFFSET)
                ctxs = tuple(build_context(self.mesh, curves, c, n, t, self.k, geometry) for c in covers)
                if previous[0] is None:
                    for ctx in ctxs:
                        ctx.ale = DiscreteALEMap(n, t, self.tau)
                else:
                    bmap = self.tracker.boundary_map()
                    maps = (solve_one_step_map(ctxs[0].space, geometry, bmap, self.gamma0, iq=ctxs[0].iq,
                                               solver=self.solver),
                            two_phase_one_step_map(ctxs[1].space, geometry, bmap, self.gamma0, iq=ctxs[1].iq,
                                                   solver=self.solver))
                    for j, ctx in enumerate(ctxs):
                        ctx.ale = DiscreteALEMap(n, t, self.tau, maps[j], previous[j])
                        ctx.ale.prune(self.k)
                if n < self.k:
                    us = tuple(ctx.space.interpolate(lambda X, ex=ex: ex(X, t)) for ctx, ex in zip(ctxs, exacts))
                else:
                    for ctx in ctxs:
                        ctx.velocity = artificial_velocity(ctx.ale, self.k, ctx.space)
                    us = two_phase_step(ctxs, histories, self.problem.data, self.scheme, self.problem.nus,
                                        self.gamma0, self.solver)
            except AleUfeError as e:
                raise RunAborted(n, f"{type(e).__name__}: {e}") from e
            for j in range(2):
                histories[j].push(StepRecord(step=n, time=t, solution=us[j], space=ctxs[j].space,
                                             cover=covers[j], curves=curves, one_step_map=ctxs[j].ale,
                                             extras={'context': ctxs[j]}))
                previous[j] = ctxs[j].ale
            monitor.record(ctxs[0], us[0], outer=(ctxs[1], us[1]))
            record = StepRecord(step=n, time=t, solution=us, curves=curves,
                                extras={'contexts': ctxs})
            records = (records + [record])[-self.k:]
            if self.on_record:
                self.on_record(record)
        return RunResult(records=records, diagnostics=monitor.rows, seconds=_time.time() - start)
