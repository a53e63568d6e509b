import logging

import numpy as np
import pytest

from aleufe.curve import LevelSetGeometry, circle_markers
from aleufe.exceptions import AleUfeError, NoContour, OutsideFictitiousDomain, RunAborted
from aleufe.fespace import AssembledSystem, FESpace, l2_error
from aleufe.flowmap import ClosedFormMotion, sbdf_update_markers
from aleufe.linalg import SparseMatrix
from aleufe.mesh import BackgroundMesh, classify_cells
from aleufe.solvers import (
    BoundaryTracker,
    FixedDomainDriver,
    HeatProblem,
    LevelSetTracker,
    MotionTracker,
    MovingHeatDriver,
    TwoPhaseData,
    TwoPhaseDriver,
    TwoPhaseProblem,
    _velocity_history,
    solve_linear,
)
from aleufe.timestep import SolutionHistory, StepRecord

CENTER = np.array([0.4931, 0.5069])
VELOCITY = np.array([0.1, 0.05])


def paraboloid(X):
    return X[:, 0] ** 2 + X[:, 1] ** 2


def linear_in_time(X, t):
    return (1.0 + t) * paraboloid(X)


def heat_problem(nu=1.0):
    return HeatProblem(source=lambda X, t: paraboloid(X) - 4.0 * nu * (1.0 + t),
                       dirichlet=linear_in_time, exact=linear_in_time, nu=nu)


def translation():
    return ClosedFormMotion(position=lambda X, t: X + t * VELOCITY, initial=lambda X, t: X - t * VELOCITY)


def still():
    return ClosedFormMotion(position=lambda X, t: np.array(X, dtype=float), initial=lambda X, t: X)


def markers():
    return circle_markers(CENTER, 0.2, 96)


def final_error(result, exact, T):
    record = result.final
    return l2_error(record.solution, lambda X: exact(X, T), record.extras['context'].vq)


def test_solve_linear():
    matrix = SparseMatrix.from_triplets(2, [(0, 0, 4.0), (1, 1, 2.0), (0, 1, 1.0), (1, 0, 1.0)])
    x = solve_linear(AssembledSystem(matrix, np.array([6.0, 5.0])))
    np.testing.assert_allclose(x, np.linalg.solve(matrix.to_dense(), [6.0, 5.0]), atol=1e-14)


def test_fixed_domain_is_exact_for_polynomial_data():
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 8)
    tracker = MotionTracker(still(), markers(), 1 / 8, 2)
    curves = tracker.start(0.0)
    result = FixedDomainDriver(mesh, curves, heat_problem(), k=2, tau=1 / 8).run(0.5)
    assert final_error(result, linear_in_time, 0.5) < 1e-8
    assert len(result.diagnostics) == 5


def test_moving_driver_reduces_to_fixed_domain():
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 8)
    problem = HeatProblem(source=lambda X, t: -np.exp(-t) * (paraboloid(X) + 4.0),
                          dirichlet=lambda X, t: np.exp(-t) * paraboloid(X),
                          exact=lambda X, t: np.exp(-t) * paraboloid(X))
    moving = MovingHeatDriver(mesh, MotionTracker(still(), markers(), 1 / 8, 2), problem, k=2, tau=1 / 8).run(0.5)
    tracker = MotionTracker(still(), markers(), 1 / 8, 2)
    fixed = FixedDomainDriver(mesh, tracker.start(0.0), problem, k=2, tau=1 / 8).run(0.5)
    np.testing.assert_allclose(moving.final.solution.coefficients, fixed.final.solution.coefficients, atol=1e-8)
    assert max(row.jacobian_deviation for row in moving.diagnostics) < 1e-8
    assert max(row.velocity_max for row in moving.diagnostics) < 1e-7


def test_translating_domain_is_exact_for_cubic_trajectories():
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 8)
    tau = 1 / 8
    tracker = MotionTracker(translation(), markers(), tau, 3)
    steps = []
    result = MovingHeatDriver(mesh, tracker, heat_problem(), k=3, tau=tau, on_step=steps.append).run(0.625)
    assert final_error(result, linear_in_time, 0.625) < 1e-7
    assert len(steps) == 6
    assert steps[-1].velocity_max == pytest.approx(np.linalg.norm(VELOCITY), rel=1e-6)
    assert all(row.residual < 1e-8 for row in steps)


def test_hausdorff_monitor_for_exact_motion():
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 8)
    tracker = MotionTracker(translation(), markers(), 1 / 8, 2)
    result = MovingHeatDriver(mesh, tracker, heat_problem(), k=2, tau=1 / 8, measure_boundary=True).run(0.25)
    assert all(row.hausdorff is not None and row.hausdorff < 1e-6 for row in result.diagnostics)


def test_step_count_must_divide_final_time():
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 8)
    driver = MovingHeatDriver(mesh, MotionTracker(still(), markers(), 1 / 8, 2), heat_problem(), k=2, tau=1 / 8)
    with pytest.raises(ValueError):
        driver.run(0.3)


class FailingTracker(BoundaryTracker):
    def __init__(self, inner):
        self.inner = inner

    def start(self, t0):
        return self.inner.start(t0)

    def advance(self, t):
        raise NoContour(f"boundary vanished at t={t}")

    def boundary_map(self):
        return self.inner.boundary_map()


def test_failures_abort_with_step():
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 8)
    tracker = FailingTracker(MotionTracker(still(), markers(), 1 / 8, 2))
    driver = MovingHeatDriver(mesh, tracker, heat_problem(), k=2, tau=1 / 8)
    with pytest.raises(RunAborted) as info:
        driver.run(0.5)
    assert info.value.step == 1
    assert isinstance(info.value.__cause__, AleUfeError)


def test_level_set_tracker_maps_to_previous_boundary():
    def phi(X, t):
        return np.linalg.norm(X - [0.5 + 0.1 * t, 0.5], axis=1) - 0.2

    tracker = LevelSetTracker(LevelSetGeometry(phi=phi, band=1 / 64), eta=0.02)
    tracker.start(0.0)
    current = tracker.advance(0.5)
    points = current[0].markers.points
    mapped = tracker.boundary_map()(points)
    np.testing.assert_allclose(np.linalg.norm(mapped - [0.5, 0.5], axis=1), 0.2, atol=1e-6)


def test_level_set_tracker_logs_topology_change(caplog):
    def phi(X, t):
        split = 0.12 * t
        d1 = np.linalg.norm(X - [0.5 - split, 0.5], axis=1)
        d2 = np.linalg.norm(X - [0.5 + split, 0.5], axis=1)
        return np.minimum(d1, d2) - 0.1

    tracker = LevelSetTracker(LevelSetGeometry(phi=phi, band=1 / 128), eta=0.01)
    assert len(tracker.start(0.0)) == 1
    with caplog.at_level(logging.INFO, logger="aleufe.solvers"):
        assert len(tracker.advance(2.0)) == 2
    assert "topology change" in caplog.text


def test_two_phase_driver_is_exact_for_polynomial_data():
    nus = (3.0, 1.0)
    mesh = BackgroundMesh((0.0, 0.0), 1.0, 8)

    def flux_jump(X, t, normals):
        return (nus[0] - nus[1]) * (1.0 + t) * np.sum(2.0 * X * normals, axis=1)

    data = TwoPhaseData(f1=lambda X, t: paraboloid(X) - 4.0 * nus[0] * (1.0 + t),
                        f2=lambda X, t: paraboloid(X) - 4.0 * nus[1] * (1.0 + t),
                        g_D=lambda X, t: np.zeros(len(X)), g_N=flux_jump, outer=linear_in_time)
    problem = TwoPhaseProblem(data=data, exact1=linear_in_time, exact2=linear_in_time, nus=nus)
    tracker = MotionTracker(still(), markers(), 1 / 8, 2)
    result = TwoPhaseDriver(mesh, tracker, problem, k=2, tau=1 / 8).run(0.5)
    final = result.final
    u1, u2 = final.solution
    ctx1, ctx2 = final.extras['contexts']
    assert l2_error(u1, lambda X: linear_in_time(X, 0.5), ctx1.vq) < 1e-8
    assert l2_error(u2, lambda X: linear_in_time(X, 0.5), ctx2.vq) < 1e-8
    assert len(result.records) == 2
    last = result.diagnostics[-1]
    assert last.l2_norm_outer == pytest.approx(l2_error(u2, None, ctx2.vq))
    assert last.energy_outer >= last.l2_norm_outer ** 2
    assert last.dofs == ctx1.space.n_dofs + ctx2.space.n_dofs
    assert all(row.l2_norm_outer is not None for row in result.diagnostics)


def test_marker_velocities_raise_outside_the_cover(unit_mesh, offset_circle):
    tau = 1 / 16
    space = FESpace(unit_mesh, classify_cells(unit_mesh, offset_circle, tau), 2)
    history = SolutionHistory(2, tau)
    for n in range(2):
        u = space.interpolate(lambda X: np.column_stack([X[:, 1], -X[:, 0]]))
        history.push(StepRecord(step=n, time=n * tau, solution=u, space=space))
    velocities = _velocity_history(space.interpolate(lambda X: X.copy()), history, 2)
    inside = offset_circle.markers.points[:4]
    np.testing.assert_allclose(velocities[0](inside), inside, atol=1e-12)
    outside = np.vstack([inside, [[0.02, 0.02]]])
    with pytest.raises(OutsideFictitiousDomain):
        sbdf_update_markers([outside, outside], velocities, tau, 2)
